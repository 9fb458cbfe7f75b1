use bimanip::dynamics::{EncoderFeeding, LatentMode};
use bimanip::pipeline::*;
use bimanip::tasks::*;
use bimanip::Error;

fn tiny(variant: &str) -> RunConfig {
    let file = r#"
        [model]
        hidden = 4
        [dynamics]
        epochs = 2
        batch_size = 4
        [planner]
        hidden = 4
        epochs = 2
        [data]
        demos = 4
        eval_spawns = 2
    "#;
    let overrides = Overrides {
        variant: Some(variant.parse().unwrap()),
        seed: Some(11),
        ..Overrides::default()
    };
    RunConfig::resolve(Some(file), &overrides).unwrap()
}

#[test]
fn desk_profile_defaults() {
    let c = RunConfig::resolve(None, &Overrides::default()).unwrap();
    assert_eq!(c.profile, Profile::Desk);
    assert_eq!(c.task, TaskKind::TableLift);
    assert_eq!(c.variant, Variant::FULL);
    assert_eq!(c.model.hidden, 64);
    assert_eq!(c.data.demos, 200);
    assert_eq!(c.data.eval_spawns, 50);
    assert_eq!(c.dynamics.epochs, 500);
    assert_eq!(c.rollout.attention_threshold, 0.08);
    assert_eq!(c.rollout.latent_mode, LatentMode::Mean);
}

#[test]
fn full_scale_profile_hyperparameters() {
    let get = |task, multi| {
        let v = Variant { multi, ..Variant::FULL };
        RunConfig::profile_defaults(Profile::Paper, task, v)
    };
    let row = |c: &RunConfig| {
        (
            c.dynamics.encoder_lr,
            c.dynamics.decoder_lr,
            c.model.hidden,
            c.model.encoder_fc_layers,
            c.model.decoder_fc_layers,
        )
    };
    assert_eq!(row(&get(TaskKind::TableLift, false)), (2e-4, 4e-5, 512, 18, 19));
    assert_eq!(row(&get(TaskKind::TableLift, true)), (1e-5, 4e-5, 512, 3, 5));
    assert_eq!(row(&get(TaskKind::PegInHole, false)), (5e-5, 5e-5, 1024, 20, 21));
    assert_eq!(row(&get(TaskKind::PegInHole, true)), (5e-5, 5e-5, 512, 3, 5));
    let t = get(TaskKind::TableLift, true);
    assert_eq!((t.data.demos, t.dynamics.epochs, t.dynamics.batch_size, t.data.eval_spawns), (2500, 12_500, 70, 127));
    assert_eq!((t.planner.learning_rate, t.planner.fc_layers, t.planner.hidden), (5e-5, 3, 512));
    let p = get(TaskKind::PegInHole, true);
    assert_eq!((p.data.demos, p.dynamics.epochs, p.dynamics.batch_size, p.data.eval_spawns), (4700, 18_800, 130, 281));
    assert_eq!((p.planner.learning_rate, p.planner.fc_layers), (1e-5, 9));
}

#[test]
fn precedence_is_cli_over_file_over_profile() {
    let file = r#"
        profile = "paper"
        seed = 5
        task = "peg-in-hole"
        [model]
        hidden = 32
        [rollout]
        latent_mode = "sample"
    "#;
    let c = RunConfig::resolve(Some(file), &Overrides::default()).unwrap();
    assert_eq!((c.profile, c.task, c.seed, c.model.hidden), (Profile::Paper, TaskKind::PegInHole, 5, 32));
    assert_eq!(c.rollout.latent_mode, LatentMode::Sample);
    // untouched keys keep the profile value for that task
    assert_eq!(c.data.demos, 4700);

    let cli = Overrides {
        seed: Some(9),
        task: Some(TaskKind::TableLift),
        profile: Some(Profile::Desk),
        latent_mode: Some(LatentMode::Mean),
        variant: Some("res".parse().unwrap()),
    };
    let c = RunConfig::resolve(Some(file), &cli).unwrap();
    assert_eq!((c.profile, c.task, c.seed, c.model.hidden), (Profile::Desk, TaskKind::TableLift, 9, 32));
    assert_eq!(c.rollout.latent_mode, LatentMode::Mean);
    assert_eq!(c.data.demos, 200);
    assert_eq!(c.variant.label(), "Res");
}

#[test]
fn unknown_keys_and_bad_values_fail() {
    for text in [
        "colour = 3",
        "[model]\nhiden = 3",
        "[variant]\ngraph = true\nresidual = true\nmulti = true\nextra = 1",
        "[world.arm]\nbogus = 1",
        "[model]\nhidden = 0",
        "[dynamics]\nencoder_lr = -1.0",
        "[rollout]\nattention_threshold = 2.0",
        "profile = \"huge\"",
        "[model\nhidden = 3",
    ] {
        let r = RunConfig::resolve(Some(text), &Overrides::default());
        assert!(matches!(r, Err(Error::Config(_))), "{text:?} gave {r:?}");
    }
    let c = RunConfig::resolve(Some("[dynamics]\nfeeding = \"teacher\""), &Overrides::default()).unwrap();
    assert_eq!(c.dynamics.feeding, EncoderFeeding::Teacher);
}

#[test]
fn serialized_config_resolves_to_itself() {
    let c = tiny("graph,multi");
    let again = RunConfig::resolve(Some(&c.to_toml().unwrap()), &Overrides::default()).unwrap();
    assert_eq!(again, c);
}

#[test]
fn variant_flags_and_labels() {
    let labels: Vec<String> = Variant::grid().iter().map(Variant::label).collect();
    assert_eq!(
        labels,
        ["GRU-GRU", "Res", "Int", "ResInt", "GRU-GRU Multi", "Res Multi", "Int Multi", "ResInt Multi"]
    );
    assert_eq!("graph,res,multi".parse::<Variant>().unwrap(), Variant::FULL);
    assert_eq!("".parse::<Variant>().unwrap(), Variant::default());
    assert_eq!("none".parse::<Variant>().unwrap().label(), "GRU-GRU");
    assert!("res,rnn".parse::<Variant>().is_err());
    assert!("relational".parse::<Variant>().unwrap().relational);
}

#[test]
fn derived_seeds_are_distinct() {
    let s = Seeds::from_master(3);
    let all = [s.demos, s.eval_spawns, s.dynamics_init, s.dynamics_training, s.planner_init, s.planner_training, s.rollout];
    for i in 0..all.len() {
        for j in 0..i {
            assert_ne!(all[i], all[j]);
        }
    }
    assert_ne!(Seeds::from_master(4).demos, s.demos);
}

#[test]
fn held_out_spawns_differ_from_training() {
    let c = tiny("");
    let task = c.task_spec();
    let train = training_dataset(&c, &task).unwrap();
    let spawns = held_out_spawns(&c, &task);
    assert_eq!(spawns.len(), 2);
    for s in &spawns {
        assert!(train.demos.iter().all(|d| &d.spawn != s));
    }
}

#[test]
fn baseline_cell_matches_standalone_run() {
    let c = tiny("graph,res,multi");
    let task = c.task_spec();
    let data = training_dataset(&c, &task).unwrap();
    let planner = LabelPlanner::new(&task, c.planner.cadence);
    let rows = run_ablation(&c, &task, &data, &planner, |_| {}).unwrap();
    assert_eq!(rows.len(), 8);
    let labels: Vec<String> = rows.iter().map(|r| r.report.model.clone()).collect();
    assert_eq!(labels[0], "GRU-GRU");
    assert_eq!(labels[7], "ResInt Multi");

    let base = tiny("none");
    let (bank, losses) = fit_bank(&base, &task, &data, |_, _| {}).unwrap();
    assert_eq!(rows[0].parameters, bank.parameter_count());
    assert_eq!(rows[0].losses, losses);
    let (report, _) = evaluate(&base, &task, &planner, &bank, &held_out_spawns(&base, &task)).unwrap();
    assert_eq!(rows[0].report, report);

    let mut csv = Vec::new();
    write_ablation_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.lines().nth(8).unwrap().starts_with("ResInt Multi,true,true,true,"));
}

#[test]
fn multi_routing_call_trace() {
    for (variant, expect) in [("multi", vec![2; 6]), ("", vec![12])] {
        let c = tiny(variant);
        let task = c.task_spec();
        let bank = build_bank(&c, &task).unwrap();
        let planner = LabelPlanner::new(&task, c.planner.cadence);
        let (_, traces) = evaluate(&c, &task, &planner, &bank, &held_out_spawns(&c, &task)).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(bank.call_counts(), expect);
    }
}

#[test]
fn attention_export() {
    let c = tiny("graph,multi");
    let task = c.task_spec();
    let bank = build_bank(&c, &task).unwrap();
    let state = task.initial_world(&held_out_spawns(&c, &task)[0]).unwrap().state_vector();
    let edges = attention_edges(&bank, &task, &state, 0.08).unwrap();
    assert_eq!(edges.len(), 6 * 21 * 21);
    for row in edges.chunks(21) {
        let s: f64 = row.iter().map(|e| e.weight).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|e| e.visible == (e.weight > 0.08)));
    }
    assert_eq!(edges[1].source, "left_gripper_x");
    assert_eq!(edges[1].target, "left_gripper_y");
    let mut out = Vec::new();
    write_attention_csv(&edges, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), edges.len() + 1);

    let plain = build_bank(&tiny("res"), &task).unwrap();
    assert!(matches!(attention_edges(&plain, &task, &state, 0.08), Err(Error::Config(_))));
}

#[test]
fn loss_csv_round_trip() {
    let losses = vec![1.5, 0.1 + 0.2, 1e-300, 3.0];
    let mut out = Vec::new();
    write_losses_csv(&losses, &mut out).unwrap();
    assert_eq!(read_losses_csv(out.as_slice()).unwrap(), losses);
    assert!(matches!(read_losses_csv("epoch,loss\n1,abc\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn relational_variant_end_to_end() {
    let c = tiny("graph,res,multi,relational");
    let task = c.task_spec();
    let data = training_dataset(&c, &task).unwrap();
    let (bank, losses) = fit_bank(&c, &task, &data, |_, _| {}).unwrap();
    assert!(losses.iter().all(|l| l.is_finite()));
    let planner = LabelPlanner::new(&task, c.planner.cadence);
    let (report, traces) = evaluate(&c, &task, &planner, &bank, &held_out_spawns(&c, &task)).unwrap();
    assert_eq!(report.rollouts, 2);
    assert_eq!(report.model, "ResInt Multi (relational)");
    assert_eq!(traces[0].predicted.len(), 70);
}
