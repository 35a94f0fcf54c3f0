use crate::scalar::Scalar;

/// Read-only view of one index along an axis. Elements are visited in
/// row-major order of the remaining axes.
#[derive(Debug, Clone, Copy)]
pub struct ChannelSlice<'a, T> {
    data: &'a [T],
    outer: usize,
    dim: usize,
    inner: usize,
    index: usize,
}

impl<'a, T: Scalar> ChannelSlice<'a, T> {
    pub(super) fn new(data: &'a [T], outer: usize, dim: usize, inner: usize, index: usize) -> Self {
        ChannelSlice {
            data,
            outer,
            dim,
            inner,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.outer * self.inner
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + 'a {
        let (dim, inner, index) = (self.dim, self.inner, self.index);
        self.data
            .chunks(dim * inner)
            .flat_map(move |block| block[index * inner..(index + 1) * inner].iter().copied())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.iter().collect()
    }

    pub fn min_max(&self) -> (T, T) {
        self.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
    }

    pub fn max_abs(&self) -> T {
        self.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> T {
        self.iter().sum()
    }
}

/// Mutable view of one index along an axis; writes land in the parent tensor.
#[derive(Debug)]
pub struct ChannelSliceMut<'a, T> {
    data: &'a mut [T],
    dim: usize,
    inner: usize,
    index: usize,
    outer: usize,
}

impl<'a, T: Scalar> ChannelSliceMut<'a, T> {
    pub(super) fn new(data: &'a mut [T], outer: usize, dim: usize, inner: usize, index: usize) -> Self {
        ChannelSliceMut {
            data,
            outer,
            dim,
            inner,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.outer * self.inner
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        let (dim, inner, index) = (self.dim, self.inner, self.index);
        self.data
            .chunks_mut(dim * inner)
            .flat_map(move |block| block[index * inner..(index + 1) * inner].iter_mut())
    }

    pub fn scale(&mut self, factor: T) {
        for v in self.iter_mut() {
            *v *= factor;
        }
    }

    pub fn as_slice(&self) -> ChannelSlice<'_, T> {
        ChannelSlice::new(self.data, self.outer, self.dim, self.inner, self.index)
    }
}
