use super::Vec3;

const PRIME_X: u64 = 73_856_093;
const PRIME_Y: u64 = 19_349_663;
const PRIME_Z: u64 = 83_492_791;

/// Hashed grid cell of a patch position at one scale level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpatialKey {
    pub key: u64,
    pub level: u8,
}

/// Three-prime XOR hash of the floor-quantized position.
///
/// Negative cell indices are sign-extended to 64 bits before the wrapping
/// multiply, so the same quantized cell always yields the same key.
pub fn spatial_hash(position: &Vec3, level: u8, cell: f64) -> SpatialKey {
    debug_assert!(cell > 0.0);
    let q = position.map(|c| (c / cell).floor() as i64 as u64);
    let key = q.x.wrapping_mul(PRIME_X) ^ q.y.wrapping_mul(PRIME_Y) ^ q.z.wrapping_mul(PRIME_Z);
    SpatialKey { key, level }
}
