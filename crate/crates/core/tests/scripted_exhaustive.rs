use std::collections::{HashSet, VecDeque};

use narrarl_core::rl::Suggestion;
use narrarl_core::{generate_grid, observe, scripted, step, Action, ArbiterRequest, GridWorld, Position};

fn reachable(grid: &GridWorld) -> Vec<Position> {
    let mut seen = HashSet::from([grid.start()]);
    let mut queue = VecDeque::from([grid.start()]);
    let mut out = Vec::new();
    while let Some(p) = queue.pop_front() {
        out.push(p);
        if p == grid.goal() {
            continue;
        }
        for a in Action::ALL {
            let next = step(grid, p, a).next;
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    out
}

#[test]
fn scripted_never_walks_into_a_blocked_cell() {
    let mut states = 0;
    for seed in 0..100u64 {
        let grid = generate_grid(7, 0.30, seed).unwrap();
        for pos in reachable(&grid).into_iter().filter(|&p| p != grid.goal()) {
            let obs = observe(&grid, pos);
            for suggested in Action::ALL {
                let req = ArbiterRequest {
                    episode: 0,
                    step: 0,
                    observation: obs,
                    suggestion: Suggestion { action: suggested, q_values: [0.0; 4], exploratory: false },
                    narrative_id: None,
                    recent_positions: vec![],
                };
                let v = scripted(&req);
                let any_free = Action::ALL.iter().any(|&a| !step(&grid, pos, a).collided);
                if any_free {
                    assert!(!step(&grid, pos, v.action).collided, "seed {seed} at {pos}");
                }
                assert_eq!(v.followed_suggestion, v.action == suggested);
                assert_eq!(v, scripted(&req));
                states += 1;
            }
        }
    }
    assert!(states > 100 * 4 * 10);
}
