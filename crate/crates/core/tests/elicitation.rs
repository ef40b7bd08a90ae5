mod common;

use confcraft::elicitation::{
    parse_confidence, parse_topk, render_prompt, ElicitationContext, ElicitationPolicy, PolicyKind,
};
use confcraft::metrics::Stage;
use proptest::prelude::*;

fn policies() -> Vec<ElicitationPolicy> {
    PolicyKind::ALL.iter().map(|k| ElicitationPolicy::of(*k)).collect()
}

#[test]
fn reply_corpus() {
    let corpus = common::corpus();
    assert!(corpus.reply.len() + corpus.reask.len() >= 40);
    let failures: Vec<String> = corpus.reply.iter().filter_map(|f| common::check_reply(f).err()).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn reask_corpus() {
    let failures: Vec<String> = common::corpus()
        .reask
        .iter()
        .filter_map(|f| common::check_reask(f).err())
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn every_integer_percent_round_trips() {
    for p in 0..=100u32 {
        assert_eq!(parse_confidence(&format!("Confidence: {p}%")).unwrap(), p as f64 / 100.0);
    }
}

#[test]
fn prior_answer_is_embedded_for_self_intervention() {
    let mut ctx = ElicitationContext::new("Mine a log", "tree at 1N 0E", Stage::Action);
    ctx.prior_answer = Some("move north".into());
    let msgs = render_prompt(&ElicitationPolicy::of(PolicyKind::SelfIntervention), &ctx).unwrap();
    assert_eq!(msgs.len(), 2);
    assert!(!msgs[0].contains("move north"));
    assert!(msgs[1].contains("move north"));
}

#[test]
fn aux_notes_sit_in_their_own_block() {
    let mut ctx = ElicitationContext::new("Mine a log", "tree at 1N 0E", Stage::Action);
    ctx.auxiliary_notes = vec!["the tree is behind water".into()];
    let msg = &render_prompt(&ElicitationPolicy::of(PolicyKind::Cot), &ctx).unwrap()[0];
    let block = msg.find("Additional scene insights:").expect("insight block");
    assert!(msg[block..].contains("- the tree is behind water"));
}

proptest! {
    #[test]
    fn prompts_carry_task_and_observation_once(
        task in "[A-Z][a-z]{3,12}( [a-z]{2,8}){0,4}",
        obs in "[a-z]{3,10}( [a-z0-9]{1,6}){0,6}",
    ) {
        let task = format!("TASK<{task}>");
        let obs = format!("OBS<{obs}>");
        for policy in policies() {
            for stage in [Stage::Perception, Stage::Action] {
                let mut ctx = ElicitationContext::new(task.clone(), obs.clone(), stage);
                ctx.prior_answer = Some("an answer".into());
                let all = render_prompt(&policy, &ctx).unwrap().concat();
                prop_assert!(all.contains(&task), "{} {}", policy, stage);
                if stage == Stage::Perception {
                    prop_assert_eq!(all.matches(&obs).count(), 1, "{} {}", policy, stage);
                }
            }
        }
    }

    #[test]
    fn confidence_is_a_probability(text in "\\PC{0,80}") {
        if let Ok(c) = parse_confidence(&text) {
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn topk_respects_bounds(
        lines in prop::collection::vec(("[a-z]{1,8}( [a-z]{1,8}){0,2}", -50i32..200, any::<bool>()), 0..8),
        k in 1usize..5,
    ) {
        let text: String = lines
            .iter()
            .enumerate()
            .map(|(i, (a, n, pct))| if *pct { format!("{}. {a} {n}%\n", i + 1) } else { format!("{}. {a} ({})\n", i + 1, *n as f64 / 100.0) })
            .collect();
        if let Ok(pairs) = parse_topk(&text, k) {
            prop_assert!(!pairs.is_empty() && pairs.len() <= k);
            prop_assert!(pairs.iter().all(|(_, p)| (0.0..=1.0).contains(p)));
            prop_assert!(pairs.windows(2).all(|w| w[0].1 >= w[1].1));
        }
    }

    #[test]
    fn rendering_is_deterministic(task in "[a-z ]{1,30}", obs in "[a-z ]{1,30}") {
        for policy in policies() {
            let mut ctx = ElicitationContext::new(task.clone(), obs.clone(), Stage::Perception);
            ctx.prior_answer = Some("a".into());
            prop_assert_eq!(render_prompt(&policy, &ctx).unwrap(), render_prompt(&policy, &ctx).unwrap());
        }
    }
}
