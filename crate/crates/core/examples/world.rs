//! Generate a world, print what the agent sees, and let the scripted solver
//! play the diamond task to the end.

use confcraft::backend::Solver;
use confcraft::world::{check_success, generate, observe, Catalog, Event, WorldParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let cat = Catalog::builtin();
    let task_id = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let task = cat.task(task_id).expect("task id between 1 and 30");
    let mut state = generate(5, task, &WorldParams::default(), cat);
    println!("task {}: {}\n{}", task.id, task.description, observe(&state));

    let solver = Solver::new(cat, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut events = Vec::new();
    while !check_success(task, &state, &events) && state.clock < 6000 {
        let action = solver.decide(&state, task, &mut rng).action;
        for e in state.apply(cat, action) {
            if matches!(e, Event::Crafted { .. } | Event::Smelted { .. } | Event::MinedBlock { .. }) {
                println!("t={:>4} {action}: {e:?}", state.clock);
            }
            events.push(e);
        }
    }
    println!("success={} after {} steps", check_success(task, &state, &events), state.clock);
}
