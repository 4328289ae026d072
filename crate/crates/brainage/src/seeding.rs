//! Deterministic seed derivation.
//!
//! Every run consumes a single user seed; per-component seeds come from
//! splitmix64 over a fixed component id, so adding a component never shifts
//! the streams of the others.

/// Component ids for seed splitting.
#[derive(Debug, Clone, Copy)]
pub enum Component {
    GeneratorInit = 1,
    DiscriminatorInit = 2,
    Training = 3,
    PhantomData = 4,
    PredictorInit = 5,
    PredictorTraining = 6,
    Synthesis = 7,
}

/// splitmix64 of `seed + component`; the standard 64-bit mixer.
pub fn derive_seed(seed: u64, component: Component) -> u64 {
    let mut z = seed.wrapping_add((component as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
