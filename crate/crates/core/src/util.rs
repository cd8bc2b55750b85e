//! Small 3-vector helpers on plain `[f64; 3]` and shared-memory primitives.

use std::cell::UnsafeCell;

pub type V3 = [f64; 3];

#[inline]
pub fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

/// Shared slot mutated only under an external exclusion protocol (cell locks
/// or the task graph's happens-before edges). The unsafe Sync burden lives
/// here so call sites document only the protocol they rely on.
#[derive(Debug)]
pub struct SharedSlot<T>(UnsafeCell<T>);

unsafe impl<T: Send> Sync for SharedSlot<T> {}

impl<T> SharedSlot<T> {
    pub fn new(value: T) -> Self {
        SharedSlot(UnsafeCell::new(value))
    }

    /// Raw pointer to the contents; dereferencing requires the caller to hold
    /// whatever lock or dependency edge makes the access exclusive.
    #[inline]
    pub fn get(&self) -> *mut T {
        self.0.get()
    }

    /// Exclusive access through `&mut self`, no protocol needed.
    #[inline]
    pub fn get_mut(&mut self) -> &mut T {
        self.0.get_mut()
    }
}
