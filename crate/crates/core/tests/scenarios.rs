mod common;

use common::tiny_schema;
use dmkit::dataset::BatchDataset;
use dmkit::policy::presets::random_spec;
use dmkit::policy::{BaseDecider, DecisionTree, History, Lag, Mask, PolicyComponent, PolicySpec, TreeNode};
use dmkit::scenario::{hide_confounders, PolicySource, Scenario, ScenarioConfig};
use dmkit::Error;
use serde_json::json;

fn config(kind: &str, actions: usize, confounding: &[&str], policy: PolicySpec, horizon: usize, min_len: usize) -> ScenarioConfig {
    serde_json::from_value(json!({
        "domain": tiny_schema(actions),
        "environment": {
            "kind": kind,
            "seed": 3,
            "hyperparameters": {"hidden": 4, "dense": [4], "states": 2, "latent": 2, "particles": 2,
                                "emission_hidden": [3], "adversary_hidden": [3], "inference_hidden": 3}
        },
        "policy": policy,
        "confounding": confounding,
        "horizon": horizon,
        "min_len": min_len,
        "seed": 21
    }))
    .unwrap()
}

fn policy(actions: usize, seed: u64) -> PolicySpec {
    random_spec(2, 3, actions, 2, true, seed).unwrap()
}

fn scenario(kind: &str, confounding: &[&str]) -> Scenario {
    Scenario::from_config(config(kind, 3, confounding, policy(3, 1), 8, 2), None).unwrap()
}

fn uniform_policy(actions: usize) -> PolicySpec {
    let c = PolicyComponent {
        decider: BaseDecider::DecisionTree(DecisionTree {
            nodes: vec![TreeNode::Leaf { scores: (0..actions).map(|a| a as f64).collect() }],
        }),
        mask: Mask::all(2, 3),
        lag: Lag::Steps(1),
        beta: 0.0,
    };
    PolicySpec::new(2, 3, actions, vec![c], vec![1.0]).unwrap()
}

#[test]
fn empty_batch_is_valid() {
    let d = scenario("css", &[]).generate_batch(0).unwrap();
    assert!(d.is_empty());
    d.validate().unwrap();
}

#[test]
fn same_seed_gives_identical_files() {
    let s = scenario("tforce", &["x1"]);
    let a = s.generate_batch(40).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = single.install(|| s.generate_batch(40)).unwrap();
    assert_eq!(a.to_jsonl_bytes().unwrap(), b.to_jsonl_bytes().unwrap());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    a.save(&p).unwrap();
    let back = BatchDataset::load(&p).unwrap();
    assert_eq!(back, a);
    assert_eq!(back.digest().unwrap(), a.digest().unwrap());
}

#[test]
fn lengths_respect_bounds() {
    let s = scenario("css", &[]);
    let d = s.generate_batch(200).unwrap();
    let lens: Vec<usize> = d.trajectories.iter().map(|t| t.len()).collect();
    assert!(lens.iter().all(|&l| (2..=8).contains(&l)));
    assert!(lens.contains(&2) && lens.contains(&8));
    for t in &d.trajectories {
        assert_eq!(t.actions.len(), t.observations.len());
    }
}

#[test]
fn zero_beta_actions_are_uniform() {
    let s = Scenario::from_config(config("css", 4, &[], uniform_policy(4), 16, 16), None).unwrap();
    let d = s.generate_batch(6250).unwrap();
    let mut counts = [0usize; 4];
    for t in &d.trajectories {
        for &a in &t.actions {
            counts[a] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    assert_eq!(n, 100_000);
    let sigma = (0.25 * 0.75 / n as f64).sqrt();
    for c in counts {
        assert!((c as f64 / n as f64 - 0.25).abs() < 4.0 * sigma, "{counts:?}");
    }
}

#[test]
fn hiding_nothing_is_identity() {
    let d = scenario("css", &[]).generate_batch(10).unwrap();
    let (h, m) = hide_confounders(&d, &[]).unwrap();
    assert_eq!(h, d);
    assert_eq!(m, 1.0);
}

#[test]
fn hiding_five_ward_features() {
    let schema = dmkit::schema::DomainSchema::ward_synth(2).unwrap();
    let hide: Vec<String> = schema.temporal_space.names[..5].to_vec();
    let mut d = BatchDataset::new(schema.clone(), 0, "none");
    d.trajectories.push(dmkit::schema::Trajectory {
        static_features: vec![0.0; 8],
        observations: vec![(0..35).map(|i| i as f64).collect()],
        actions: vec![1],
    });
    let (h, m) = hide_confounders(&d, &hide).unwrap();
    assert_eq!(m, 30.0 / 35.0);
    assert_eq!(h.trajectories[0].observations[0], (5..35).map(|i| i as f64).collect::<Vec<_>>());
    assert_eq!(h.hidden_columns, hide);
}

#[test]
fn unknown_confounder_is_config_error() {
    let d = scenario("css", &[]).generate_batch(2).unwrap();
    assert!(matches!(hide_confounders(&d, &["nope".into()]), Err(Error::Config(_))));
    let r = Scenario::from_config(config("css", 3, &["nope"], policy(3, 1), 8, 2), None);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn projection_during_and_after_generation_agree() {
    for kind in ["tforce", "css"] {
        let hidden = scenario(kind, &["x0", "x2"]);
        let open = scenario(kind, &[]);
        let during = hidden.generate_batch(50).unwrap();
        let (after, m) = hide_confounders(&open.generate_batch(50).unwrap(), &["x0".into(), "x2".into()]).unwrap();
        assert_eq!(during.trajectories, after.trajectories);
        assert_eq!(during.hidden_columns, after.hidden_columns);
        assert_eq!(m, hidden.confoundedness());
        assert!((m - 1.0 / 3.0).abs() < 1e-15);
        assert!(during.trajectories.iter().all(|t| t.observations.iter().all(|x| x.len() == 1)));
    }
}

#[test]
fn mismatched_policy_is_scenario_error() {
    let wrong = random_spec(2, 4, 3, 1, false, 0).unwrap();
    let r = Scenario::from_config(config("css", 3, &[], wrong, 8, 2), None);
    assert!(matches!(r, Err(Error::Scenario(_))));
    let r = Scenario::from_config(config("css", 3, &[], policy(3, 1), 99, 2), None);
    assert!(matches!(r, Err(Error::Scenario(_))));
}

#[test]
fn live_reset_is_deterministic_and_terminates_at_horizon() {
    let s = scenario("svae", &["x1"]);
    let (_, a) = s.live(4).unwrap();
    let (mut sess, b) = s.live(4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.observation.len(), 2);
    let mut last = b;
    while !last.done {
        assert_eq!(last.t < 8, true);
        last = sess.step(1).unwrap();
    }
    assert_eq!(last.t, 8);
    assert!(matches!(sess.step(0), Err(Error::Session(_))));
    let v = serde_json::to_value(&last).unwrap();
    assert!(v.get("reward").is_none());
}

#[test]
fn live_rollout_matches_batch_for_every_kind() {
    for kind in ["tforce", "balanced", "css", "svae"] {
        let s = scenario(kind, &[]);
        for i in 0..6u64 {
            let expect = s.sample_full(i).unwrap();
            let len = s.episode_length(i);
            let mut prng = s.policy_stream(i);
            let member = s.policy.draw_member(&mut prng);
            let (mut sess, first) = s.live(i).unwrap();
            let x_s = first.static_features.clone();
            let mut obs = vec![first.observation];
            let mut acts = Vec::new();
            loop {
                let y = s.policy.sample_action(&History::new(&x_s, &obs, &acts), member, &mut prng).unwrap();
                acts.push(y);
                if obs.len() == len {
                    break;
                }
                obs.push(sess.step(y).unwrap().observation);
            }
            assert_eq!(x_s, expect.static_features, "{kind}");
            assert_eq!(obs, expect.observations, "{kind}");
            assert_eq!(acts, expect.actions, "{kind}");
        }
    }
}

#[test]
fn swapping_the_policy_leaves_the_environment_alone() {
    let a = Scenario::from_config(config("css", 3, &[], policy(3, 1), 8, 2), None).unwrap();
    let b = Scenario::from_config(config("css", 3, &[], policy(3, 2), 8, 2), None).unwrap();
    assert_ne!(a.provenance(), b.provenance());
    let da = a.generate_full(30).unwrap();
    let db = b.generate_full(30).unwrap();
    for (ta, tb) in da.trajectories.iter().zip(&db.trajectories) {
        assert_eq!(ta.static_features, tb.static_features);
        assert_eq!(ta.observations[0], tb.observations[0]);
        assert_eq!(ta.len(), tb.len());
        let t = ta.len();
        let ea = a.env.step_distribution(&ta.static_features, &ta.observations, &ta.actions).unwrap();
        let eb = b.env.step_distribution(&ta.static_features, &ta.observations, &ta.actions).unwrap();
        assert_eq!(ea, eb);
        assert!(t >= 1);
    }
}

#[test]
fn committee_mode_generates() {
    let mut p = policy(3, 7);
    p.mode = dmkit::policy::MixtureMode::Committee;
    let s = Scenario::from_config(config("css", 3, &[], p, 8, 2), None).unwrap();
    s.generate_batch(10).unwrap().validate().unwrap();
}

#[test]
fn config_file_with_policy_file_and_preset() {
    let dir = tempfile::tempdir().unwrap();
    let g = dmkit::policy::export_ground_truth(&policy(3, 1)).unwrap();
    g.save(&dir.path().join("truth.json")).unwrap();
    let mut cfg = config("css", 3, &[], policy(3, 1), 8, 2);
    cfg.policy = PolicySource::File { file: "truth.json".into() };
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let s = Scenario::load(&path).unwrap();
    assert_eq!(s.policy, policy(3, 1));

    let ward: ScenarioConfig = serde_json::from_value(json!({
        "domain": {"builtin": "ward_synth", "actions": 2},
        "environment": {"ground_truth": "ward_synth"},
        "policy": {"preset": "clinician-team", "seed": 4},
        "horizon": 10,
        "seed": 1
    }))
    .unwrap();
    assert_eq!(ward.min_len, 5);
    let s = Scenario::from_config(ward, None).unwrap();
    let d = s.generate_batch(5).unwrap();
    d.validate().unwrap();
    assert!(serde_json::from_value::<ScenarioConfig>(json!({"domain": {"builtin": "ward_synth", "actions": 2},
        "environment": {}, "policy": {"preset": "guideline"}, "horizon": 3, "seed": 1, "extra": 1})).is_err());
}
