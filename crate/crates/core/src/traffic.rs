//! Synthetic traffic patterns for background workload.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mesh::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    UniformRandom,
    Tornado,
    Shuffle,
    Neighbor,
    BitRotation,
    BitComplement,
}

impl Pattern {
    pub const ALL: [Pattern; 6] = [
        Pattern::UniformRandom,
        Pattern::Tornado,
        Pattern::Shuffle,
        Pattern::Neighbor,
        Pattern::BitRotation,
        Pattern::BitComplement,
    ];

    /// Patterns defined on the binary address need `R^2` to be a power of two.
    pub fn is_bit_pattern(self) -> bool {
        matches!(
            self,
            Pattern::Shuffle | Pattern::BitRotation | Pattern::BitComplement
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::UniformRandom => "uniform_random",
            Pattern::Tornado => "tornado",
            Pattern::Shuffle => "shuffle",
            Pattern::Neighbor => "neighbor",
            Pattern::BitRotation => "bit_rotation",
            Pattern::BitComplement => "bit_complement",
        }
    }

    pub fn check_radix(self, radix: usize) -> Result<()> {
        if self.is_bit_pattern() && !radix.is_power_of_two() {
            return Err(Error::Config(format!(
                "pattern {self} needs a power-of-two mesh radix, got {radix}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Pattern::ALL
            .into_iter()
            .find(|p| p.as_str() == key)
            .ok_or_else(|| Error::Parse(format!("unknown traffic pattern `{s}`")))
    }
}

/// Destination of a background packet generated at `src`.
///
/// Bit patterns operate on the `log2(R^2)`-bit node address. Deterministic
/// patterns may map a node onto itself (e.g. the fixed points of shuffle);
/// the simulator skips those injections.
pub fn stp_destination<G: Rng + ?Sized>(
    pattern: Pattern,
    src: NodeId,
    radix: usize,
    rng: &mut G,
) -> Result<NodeId> {
    pattern.check_radix(radix)?;
    let nodes = radix * radix;
    NodeId::new(src.0, radix)?;
    let bits = nodes.trailing_zeros();
    let mask = nodes - 1;
    let (row, col) = (src.row(radix), src.col(radix));
    let id = match pattern {
        Pattern::UniformRandom => {
            let pick = rng.gen_range(0..nodes - 1);
            if pick >= src.0 {
                pick + 1
            } else {
                pick
            }
        }
        Pattern::BitComplement => !src.0 & mask,
        Pattern::Shuffle => ((src.0 << 1) | (src.0 >> (bits - 1))) & mask,
        Pattern::BitRotation => ((src.0 >> 1) | ((src.0 & 1) << (bits - 1))) & mask,
        Pattern::Neighbor => row * radix + (col + 1) % radix,
        Pattern::Tornado => row * radix + (col + radix.div_ceil(2) - 1) % radix,
    };
    Ok(NodeId(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dst(p: Pattern, src: usize, r: usize) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        stp_destination(p, NodeId(src), r, &mut rng).unwrap().0
    }

    #[test]
    fn documented_examples() {
        assert_eq!(dst(Pattern::BitComplement, 0, 4), 15);
        assert_eq!(dst(Pattern::Neighbor, 3, 4), 0);
        // ceil(16/2) - 1 = 7
        assert_eq!(dst(Pattern::Tornado, 0, 16), 7);
    }

    #[test]
    fn bit_rotations_are_inverse() {
        for s in 0..64 {
            let shuffled = dst(Pattern::Shuffle, s, 8);
            assert_eq!(dst(Pattern::BitRotation, shuffled, 8), s);
        }
        // 0b0001 -> 0b0010 (rotate left), 0b0001 -> 0b1000 (rotate right)
        assert_eq!(dst(Pattern::Shuffle, 1, 4), 2);
        assert_eq!(dst(Pattern::BitRotation, 1, 4), 8);
    }

    #[test]
    fn bit_patterns_need_power_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = stp_destination(Pattern::BitComplement, NodeId(0), 6, &mut rng);
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(stp_destination(Pattern::Tornado, NodeId(0), 6, &mut rng).is_ok());
    }

    #[test]
    fn uniform_never_picks_source_and_covers_others() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut seen = [0usize; 16];
        for _ in 0..4000 {
            let d = stp_destination(Pattern::UniformRandom, NodeId(5), 4, &mut rng).unwrap();
            seen[d.0] += 1;
        }
        assert_eq!(seen[5], 0);
        assert!(seen.iter().enumerate().all(|(i, &c)| i == 5 || c > 150));
    }

    #[test]
    fn parse_names() {
        for p in Pattern::ALL {
            assert_eq!(p.as_str().parse::<Pattern>().unwrap(), p);
        }
        assert!("zigzag".parse::<Pattern>().is_err());
    }
}
