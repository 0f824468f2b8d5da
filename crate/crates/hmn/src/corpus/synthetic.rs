//! Desk-scale synthetic lookup task: a knowledge base of per-entity phone and
//! address facts, a greeting exchange, then a user request for one fact. The
//! gold response always contains the knowledge-base object, so the task is
//! solvable only by reading the right triple, and an out-of-vocabulary split
//! exercises the copy path on entities never seen in training.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;

use super::{CorpusError, Dialogue, KbTriple, Speaker, Turn};

#[derive(Clone, Copy, Debug)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    pub n_dialogs: usize,
    pub oov_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    pub test_oov: Vec<Dialogue>,
    /// Every copyable entity token (names and fact values, both pools).
    pub entities: Vec<String>,
}

const RELATIONS: [&str; 2] = ["phone", "address"];
const GREETINGS: [&str; 2] = ["hello", "good morning"];
const GREETING_REPLY: &str = "hello what can i help you with today";
const QUESTIONS: [&str; 2] = ["what is the {r} of {e}", "can you give me the {r} of {e}"];
const DISTRACTORS: usize = 3;

fn entity_name(i: usize) -> String {
    format!("resto_{i}")
}

fn fact_value(entity: &str, relation: &str) -> String {
    format!("{entity}_{relation}")
}

fn make_dialogue(
    id: String,
    asked: &str,
    distractor_pool: &[String],
    rng: &mut ChaCha20Rng,
) -> Dialogue {
    let relation = RELATIONS[rng.gen_range(0..RELATIONS.len())];
    let value = fact_value(asked, relation);

    let mut kb_entities: Vec<String> = distractor_pool
        .choose_multiple(rng, DISTRACTORS)
        .cloned()
        .collect();
    kb_entities.push(asked.to_string());
    let mut kb: Vec<KbTriple> = kb_entities
        .iter()
        .flat_map(|e| {
            RELATIONS
                .iter()
                .map(move |r| KbTriple::new(e, r, &fact_value(e, r)))
        })
        .collect();
    kb.shuffle(rng);

    let greeting = GREETINGS[rng.gen_range(0..GREETINGS.len())];
    let question = QUESTIONS[rng.gen_range(0..QUESTIONS.len())]
        .replace("{r}", relation)
        .replace("{e}", asked);
    let answer = format!("the {relation} of {asked} is {value}");

    let kb_rows = kb.len();
    Dialogue {
        dialogue_id: id,
        scenario: Some("lookup".to_string()),
        turns: vec![
            Turn {
                speaker: Speaker::User,
                utterance: greeting.to_string(),
            },
            Turn {
                speaker: Speaker::Sys,
                utterance: GREETING_REPLY.to_string(),
            },
            Turn {
                speaker: Speaker::User,
                utterance: question,
            },
            Turn {
                speaker: Speaker::Sys,
                utterance: answer,
            },
        ],
        kb,
        kb_rows,
    }
}

/// Generate train/dev/test splits, deterministic under the seed. The test
/// split of `n_dialogs / 3` dialogues is divided into an in-vocabulary part
/// and an out-of-vocabulary part of `round(oov_fraction * size)` dialogues
/// whose asked entity comes from a pool disjoint from training (distractors
/// stay in-vocabulary so the unknown entity remains identifiable).
pub fn generate_synthetic_task(config: &SyntheticConfig) -> Result<SyntheticTask, CorpusError> {
    if config.n_entities < 4 {
        return Err(CorpusError::InvalidParameter(format!(
            "n_entities must be >= 4, got {}",
            config.n_entities
        )));
    }
    if !(0.0..1.0).contains(&config.oov_fraction) {
        return Err(CorpusError::InvalidParameter(format!(
            "oov_fraction must be in [0, 1), got {}",
            config.oov_fraction
        )));
    }
    if config.n_dialogs == 0 {
        return Err(CorpusError::InvalidParameter(
            "n_dialogs must be positive".to_string(),
        ));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let train_pool: Vec<String> = (1..=config.n_entities).map(entity_name).collect();
    let oov_pool: Vec<String> = (config.n_entities + 1..=2 * config.n_entities)
        .map(entity_name)
        .collect();

    let n_dev = (config.n_dialogs / 6).max(1);
    let n_test = (config.n_dialogs / 3).max(1);
    let n_test_oov = (config.oov_fraction * n_test as f64).round() as usize;
    let n_test_iv = n_test - n_test_oov;

    let gen_split = |prefix: &str, count: usize, pool: &[String], rng: &mut ChaCha20Rng| {
        (0..count)
            .map(|i| {
                let asked = pool[rng.gen_range(0..pool.len())].clone();
                make_dialogue(format!("syn-{prefix}-{}", i + 1), &asked, &train_pool, rng)
            })
            .collect::<Vec<_>>()
    };

    let train = gen_split("train", config.n_dialogs, &train_pool, &mut rng);
    let dev = gen_split("dev", n_dev, &train_pool, &mut rng);
    let test = gen_split("test", n_test_iv, &train_pool, &mut rng);
    let test_oov = gen_split("oov", n_test_oov, &oov_pool, &mut rng);

    let mut entities = Vec::new();
    for pool in [&train_pool, &oov_pool] {
        for e in pool {
            entities.push(e.clone());
            for r in RELATIONS {
                entities.push(fact_value(e, r));
            }
        }
    }

    Ok(SyntheticTask {
        train,
        dev,
        test,
        test_oov,
        entities,
    })
}
