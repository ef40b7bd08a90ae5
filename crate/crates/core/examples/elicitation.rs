//! Render the prompts each policy sends for one action step, then parse some replies.

use confcraft::elicitation::{parse_reply, render_prompt, ElicitationContext, ElicitationPolicy, PolicyKind};
use confcraft::metrics::Stage;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ctx = ElicitationContext::new(
        "Mine a piece of stone",
        "Time: day\n- stone at 1N 0E\n- tree at 0N 3W",
        Stage::Action,
    );
    for kind in PolicyKind::ALL {
        let policy = ElicitationPolicy::of(kind);
        let mut ctx = ctx.clone();
        if kind == PolicyKind::SelfIntervention {
            ctx.prior_answer = Some("mine north".into());
        }
        println!("=== {policy}");
        for (i, p) in render_prompt(&policy, &ctx)?.iter().enumerate() {
            println!("--- message {i}\n{p}");
        }
    }

    let replies = [
        (ElicitationPolicy::vanilla(), "Action: mine north\nConfidence: 85%"),
        (ElicitationPolicy::of(PolicyKind::Cot), "Stone is right ahead, so I mine it.\nmine north\nConfidence: 0.7"),
        (ElicitationPolicy::topk(3), "1. mine north (60%)\n2. turn west (30%)\n3. wait (10%)"),
    ];
    for (policy, reply) in replies {
        let r = parse_reply(&policy, reply)?;
        println!("{policy}: {:?} at {:.2} ({} candidates)", r.answer_text, r.confidence, r.candidates.len());
    }
    Ok(())
}
