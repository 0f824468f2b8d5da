use super::NumericsError;

/// Scalar type the value system is generic over.
///
/// Training runs at `f32`; gradient checking instantiates everything at `f64`
/// because central differences are noise-limited at single precision.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssignOps
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Default precision used by the trainer and CLI.
pub type TrainReal = f32;

/// Dense row-major array. Only ranks 1 and 2 are ever produced by the graph;
/// scalars are rank-1 arrays of length 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<R> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Array<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.contains(&0) {
            return Err(NumericsError::BadShape {
                shape,
                len: data.len(),
            });
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![R::zero(); len],
        }
    }

    pub fn scalar(x: R) -> Self {
        Array {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<R>) -> Self {
        Array {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<R>) -> Result<Self, NumericsError> {
        Array::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape == [1]
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row count of a matrix, or 1 for a vector.
    pub fn rows(&self) -> usize {
        if self.is_matrix() {
            self.shape[0]
        } else {
            1
        }
    }

    /// Column count of a matrix, or the length of a vector.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn row(&self, r: usize) -> &[R] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Euclidean norm, accumulated at f64.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|x| {
                let v = x.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn convert<T: Real>(&self) -> Array<T> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::from_f64(x.as_f64())).collect(),
        }
    }
}

/// Ordered collection of named arrays. Holds both trainable parameters and
/// their gradients; insertion order is the serialization and reporting order.
#[derive(Clone, Debug)]
pub struct NamedArrays<R> {
    names: Vec<String>,
    arrays: Vec<Array<R>>,
    index: std::collections::HashMap<String, usize>,
}

impl<R: Real> Default for NamedArrays<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> NamedArrays<R> {
    pub fn new() -> Self {
        NamedArrays {
            names: Vec::new(),
            arrays: Vec::new(),
            index: std::collections::HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, array: Array<R>) -> Result<usize, NumericsError> {
        if self.index.contains_key(name) {
            return Err(NumericsError::DuplicateName(name.to_string()));
        }
        let idx = self.arrays.len();
        self.names.push(name.to_string());
        self.arrays.push(array);
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn array(&self, idx: usize) -> &Array<R> {
        &self.arrays[idx]
    }

    pub fn array_mut(&mut self, idx: usize) -> &mut Array<R> {
        &mut self.arrays[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Array<R>> {
        self.index.get(name).map(|&i| &self.arrays[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<R>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.arrays.iter())
    }

    /// Same names and shapes, all entries zero.
    pub fn zeros_like(&self) -> Self {
        NamedArrays {
            names: self.names.clone(),
            arrays: self.arrays.iter().map(|a| Array::zeros(a.shape())).collect(),
            index: self.index.clone(),
        }
    }

    pub fn convert<T: Real>(&self) -> NamedArrays<T> {
        NamedArrays {
            names: self.names.clone(),
            arrays: self.arrays.iter().map(|a| a.convert()).collect(),
            index: self.index.clone(),
        }
    }

    pub fn total_elements(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }

    /// Global Euclidean norm over every array.
    pub fn global_norm(&self) -> f64 {
        self.arrays
            .iter()
            .map(|a| {
                a.data()
                    .iter()
                    .map(|x| {
                        let v = x.as_f64();
                        v * v
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }
}
