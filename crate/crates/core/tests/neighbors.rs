use proptest::prelude::*;
use sizegrid_core::features::neighbors::{neighbor_cells, Circle};
use sizegrid_core::SizeGrid;

fn grid(w: usize, h: usize) -> SizeGrid {
    let d1 = (0..w).map(|k| (30 + k).to_string()).collect();
    let d2 = (0..h).map(|k| (28 + 2 * k).to_string()).collect();
    SizeGrid::new("WB-Prop-H", d1, d2).unwrap()
}

proptest! {
    #[test]
    fn rings_are_symmetric(w in 1usize..10, h in 0usize..10, pick in any::<prop::sample::Index>()) {
        let g = grid(w, h);
        let a = &g.cells()[pick.index(g.len())];
        for circle in [Circle::First, Circle::Second] {
            for (_, b) in neighbor_cells(a, &g, circle) {
                let Some(b) = b else { continue };
                let back = neighbor_cells(b, &g, circle);
                prop_assert!(back.iter().any(|(_, c)| *c == Some(a)));
            }
        }
    }

    #[test]
    fn rings_are_disjoint_and_exclude_the_candidate(w in 1usize..10, h in 0usize..10, pick in any::<prop::sample::Index>()) {
        let g = grid(w, h);
        let a = &g.cells()[pick.index(g.len())];
        let mut seen = std::collections::BTreeSet::new();
        for circle in [Circle::First, Circle::Second] {
            for (_, c) in neighbor_cells(a, &g, circle) {
                if let Some(c) = c {
                    prop_assert!(c != a);
                    prop_assert!(seen.insert((c.i, c.j)));
                }
            }
        }
    }
}
