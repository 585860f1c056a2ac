use std::fs;

use rmia::config::ExperimentConfig;
use rmia::io::{read_jsonl, read_log_roc, ScoreRecord};
use rmia::runner::{self, Direction, ExperimentReport, GameSample, SUMMARY_HEADER};
use rmia_core::attack::AttackKind;

const SMALL: &str = r#"
id = "small"
seed = 3
[data]
kind = "synthetic"
d = 8
class_separation = 0.4
[split]
owner_n = 200
shadow_n = 200
eval_out_n = 200
[model]
architecture = [8]
[model.train]
learning_rate = 0.01
epochs = 40
[attack]
n_shadows = 4
[game]
n_per_side = 40
"#;

#[test]
fn run_writes_every_artifact() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let out = runner::run_experiment(&cfg, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    runner::persist(&out, dir.path()).unwrap();

    let report: ExperimentReport = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.schema_version, 1);
    assert_eq!(report.config, cfg);
    assert_eq!(report.attacks.len(), 2 * AttackKind::ALL.len());
    assert_eq!(report.owner_queries.recourse_only_attacks, 0);

    for kind in AttackKind::ALL {
        for dir_name in ["forward", "reversed"] {
            let rows = read_log_roc(&dir.path().join(format!("roc_{}_{dir_name}.csv", kind.slug()))).unwrap();
            assert!(rows.first().is_some_and(|r| *r == (0.0, 0.0)));
            assert!(rows.last().is_some_and(|r| *r == (1.0, 1.0)));
        }
    }

    let scores: Vec<ScoreRecord> = read_jsonl(&dir.path().join("scores.jsonl")).unwrap();
    assert_eq!(scores, out.records);
    let game: Vec<GameSample> = read_jsonl(&dir.path().join("game.jsonl")).unwrap();
    assert_eq!(game.len(), report.game.valid_in + report.game.valid_out);

    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some(SUMMARY_HEADER));
    assert_eq!(lines.count(), report.attacks.len());
}

#[test]
fn saved_game_attack_matches_full_run() {
    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    cfg.attack.kinds = vec![AttackKind::Cfd, AttackKind::CfdLrt];
    let full = runner::run_experiment(&cfg, 1).unwrap();
    let offline = runner::attack_game(&cfg, &full.game.samples, 1).unwrap();
    assert_eq!(offline.records, full.records);
    for a in &offline.attacks {
        let b = full.report.attack(a.attack, a.direction).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }
    assert_eq!(offline.shadows, full.report.shadows);

    cfg.attack.kinds = vec![AttackKind::Loss];
    assert!(matches!(runner::attack_game(&cfg, &full.game.samples, 1), Err(rmia::Error::Config(_))));
}

#[test]
fn directions_mirror_each_other() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let out = runner::run_experiment(&cfg, 1).unwrap();
    for kind in AttackKind::ALL {
        let f: Vec<&ScoreRecord> = out.records.iter().filter(|r| r.attack == kind && r.direction == Direction::Forward).collect();
        let b: Vec<&ScoreRecord> = out.records.iter().filter(|r| r.attack == kind && r.direction == Direction::Reversed).collect();
        assert_eq!(f.len(), b.len());
        for (x, y) in f.iter().zip(&b) {
            assert_eq!(x.point_id, y.point_id);
            assert_eq!(x.statistic, y.statistic);
            assert_eq!(x.score, -y.score);
        }
    }
}
