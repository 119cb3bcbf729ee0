//! Mesh geometry: node addressing, port directions and dimension-ordered routing.
//!
//! Node `id = row * R + col`. Columns grow eastward and rows grow northward,
//! so the east neighbor of `id` is `id + 1` and the north neighbor is `id + R`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Router address inside an `R x R` mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn new(id: usize, radix: usize) -> Result<Self> {
        if id >= radix * radix {
            return Err(Error::NodeOutOfRange { id, radix });
        }
        Ok(NodeId(id))
    }

    pub fn from_coords(row: usize, col: usize, radix: usize) -> Self {
        debug_assert!(row < radix && col < radix);
        NodeId(row * radix + col)
    }

    #[inline]
    pub fn row(self, radix: usize) -> usize {
        self.0 / radix
    }

    #[inline]
    pub fn col(self, radix: usize) -> usize {
        self.0 % radix
    }

    /// Neighbor reached by leaving through the output facing `dir`.
    pub fn neighbor(self, dir: Direction, radix: usize) -> Option<NodeId> {
        let (row, col) = (self.row(radix), self.col(radix));
        match dir {
            Direction::E if col + 1 < radix => Some(NodeId(self.0 + 1)),
            Direction::W if col > 0 => Some(NodeId(self.0 - 1)),
            Direction::N if row + 1 < radix => Some(NodeId(self.0 + radix)),
            Direction::S if row > 0 => Some(NodeId(self.0 - radix)),
            _ => None,
        }
    }

    pub fn manhattan(self, other: NodeId, radix: usize) -> usize {
        self.row(radix).abs_diff(other.row(radix)) + self.col(radix).abs_diff(other.col(radix))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A side of a router. Used both for input ports (the side a flit enters
/// through) and for output ports (the side a flit leaves through).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    E,
    N,
    W,
    S,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::E, Direction::N, Direction::W, Direction::S];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Direction::E => 0,
            Direction::N => 1,
            Direction::W => 2,
            Direction::S => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Direction::ALL.get(i).copied()
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::E => Direction::W,
            Direction::N => Direction::S,
            Direction::W => Direction::E,
            Direction::S => Direction::N,
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Direction::E | Direction::W)
    }

    /// Whether the router at `node` has an input port on this side.
    pub fn port_exists(self, node: NodeId, radix: usize) -> bool {
        node.neighbor(self, radix).is_some()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::E => "E",
            Direction::N => "N",
            Direction::W => "W",
            Direction::S => "S",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "E" | "EAST" => Ok(Direction::E),
            "N" | "NORTH" => Ok(Direction::N),
            "W" | "WEST" => Ok(Direction::W),
            "S" | "SOUTH" => Ok(Direction::S),
            other => Err(Error::Parse(format!("unknown direction `{other}`"))),
        }
    }
}

/// Input port a flit enters a router through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entry {
    Local,
    Port(Direction),
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entry::Local => f.write_str("LOCAL"),
            Entry::Port(d) => write!(f, "{d}"),
        }
    }
}

/// Output direction chosen by XY routing at `at` for a packet heading to `dst`.
/// `None` means eject at the local port.
#[inline]
pub fn xy_next_hop(at: NodeId, dst: NodeId, radix: usize) -> Option<Direction> {
    let (ac, dc) = (at.col(radix), dst.col(radix));
    if dc > ac {
        return Some(Direction::E);
    }
    if dc < ac {
        return Some(Direction::W);
    }
    let (ar, dr) = (at.row(radix), dst.row(radix));
    if dr > ar {
        Some(Direction::N)
    } else if dr < ar {
        Some(Direction::S)
    } else {
        None
    }
}

/// X-first dimension-ordered path from `src` to `dst`.
///
/// Each element names a router on the path and the input port the flit
/// arrives through; a westbound flit enters the next router's E port.
pub fn xy_route(src: NodeId, dst: NodeId, radix: usize) -> Result<Vec<(NodeId, Entry)>> {
    NodeId::new(src.0, radix)?;
    NodeId::new(dst.0, radix)?;
    let mut path = Vec::with_capacity(src.manhattan(dst, radix) + 1);
    path.push((src, Entry::Local));
    let mut at = src;
    while let Some(out) = xy_next_hop(at, dst, radix) {
        at = at.neighbor(out, radix).expect("xy routing stays on mesh");
        path.push((at, Entry::Port(out.opposite())));
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn route(src: usize, dst: usize, r: usize) -> Vec<(usize, String)> {
        xy_route(NodeId(src), NodeId(dst), r)
            .unwrap()
            .into_iter()
            .map(|(n, e)| (n.0, e.to_string()))
            .collect()
    }

    fn owned(v: &[(usize, &str)]) -> Vec<(usize, String)> {
        v.iter().map(|(n, s)| (*n, s.to_string())).collect()
    }

    #[test]
    fn zero_distance_route() {
        assert_eq!(route(5, 5, 4), owned(&[(5, "LOCAL")]));
    }

    #[test]
    fn westbound_flits_enter_east_ports() {
        assert_eq!(
            route(7, 4, 4),
            owned(&[(7, "LOCAL"), (6, "E"), (5, "E"), (4, "E")])
        );
    }

    // Independent walk: step the column first, then the row, one unit at a time.
    fn replay(src: usize, dst: usize, r: usize) -> Vec<(usize, String)> {
        let (mut row, mut col) = ((src / r) as i64, (src % r) as i64);
        let (dr, dc) = ((dst / r) as i64, (dst % r) as i64);
        let mut out = vec![(src, "LOCAL".to_string())];
        while col != dc {
            let step = (dc - col).signum();
            col += step;
            out.push((
                (row * r as i64 + col) as usize,
                if step < 0 { "E" } else { "W" }.into(),
            ));
        }
        while row != dr {
            let step = (dr - row).signum();
            row += step;
            out.push((
                (row * r as i64 + col) as usize,
                if step < 0 { "N" } else { "S" }.into(),
            ));
        }
        out
    }

    #[test]
    fn l_shaped_route_on_16x16() {
        let expected = owned(&[
            (39, "LOCAL"),
            (38, "E"),
            (37, "E"),
            (36, "E"),
            (35, "E"),
            (19, "N"),
            (3, "N"),
        ]);
        assert_eq!(replay(39, 3, 16), expected);
        assert_eq!(route(39, 3, 16), expected);
    }

    #[test]
    fn routes_match_replay_exhaustively_on_4x4() {
        for s in 0..16 {
            for d in 0..16 {
                assert_eq!(route(s, d, 4), replay(s, d, 4), "{s}->{d}");
            }
        }
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        assert!(xy_route(NodeId(16), NodeId(0), 4).is_err());
        assert!(xy_route(NodeId(0), NodeId(99), 4).is_err());
    }

    #[test]
    fn edge_routers_lack_outer_ports() {
        let r = 4;
        assert!(!Direction::E.port_exists(NodeId(3), r));
        assert!(!Direction::N.port_exists(NodeId(12), r));
        assert!(!Direction::W.port_exists(NodeId(4), r));
        assert!(!Direction::S.port_exists(NodeId(1), r));
        assert!(Direction::E.port_exists(NodeId(5), r));
    }
}
