use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const DOUBLE_WELL: &str = r#"
[potential]
family = "double_well"

[chain]
sequence = [0, 1]

[experiment]
gaps = [0.3, 0.7]
t_end = 200.0
snapshot_every = 2.0
"#;

const TRIPLE_WELL: &str = r#"
[potential]
family = "triple_well"

[chain]
sequence = [0, 1, 2, 1]
"#;

struct Lab {
    dir: TempDir,
}

impl Lab {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_into(args, &self.out())
    }

    fn run_into(&self, args: &[&str], out: &Path) -> Output {
        Command::new(env!("CARGO_BIN_EXE_layerlab"))
            .args(args)
            .arg("--config")
            .arg(self.dir.path().join("run.toml"))
            .arg("--out")
            .arg(out)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.out().join(name)).unwrap()).unwrap()
    }
}

fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("an error line on stderr");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn heteroclinic_reports_the_double_well_rate() {
    let lab = Lab::new(DOUBLE_WELL);
    lab.ok(&["heteroclinic"]);
    let r = lab.json("heteroclinic.json");
    let sqrt2 = std::f64::consts::SQRT_2;
    for conn in r["report"]["connections"].as_array().unwrap() {
        for side in ["left", "right"] {
            assert!((conn[side]["mu"].as_f64().unwrap() - sqrt2).abs() < 1e-3);
            assert!((conn[side]["mu_fit"].as_f64().unwrap() - sqrt2).abs() < 1e-3);
        }
        assert!((conn["action"].as_f64().unwrap() - 2.0 * sqrt2 / 3.0).abs() < 1e-6);
    }
    assert_eq!(r["report"]["chain"]["existence"]["exists"], Value::Bool(true));
    assert!(lab.out().join("connections/layer_0.csv").exists());
    assert!(lab.out().join("connections/layer_1.csv").exists());
}

#[test]
fn every_artifact_carries_the_header() {
    let lab = Lab::new(DOUBLE_WELL);
    lab.ok(&["heteroclinic"]);
    lab.ok(&["ansatz", "--emit-gnuplot"]);
    let resolved = std::fs::read_to_string(lab.out().join("config.resolved.toml")).unwrap();
    let first = resolved.lines().next().unwrap();
    let hash = first.split("config_hash=").nth(1).unwrap().split(' ').next().unwrap().to_string();
    assert!(first.starts_with(&format!("# layerlab {} ", env!("CARGO_PKG_VERSION"))));
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    // the resolved config is itself a valid config with every default spelled out
    assert!(resolved.contains("window_gap = 0.25"));

    let all = files(&lab.out());
    assert!(all.iter().any(|p| p.extension().is_some_and(|e| e == "gp")));
    for p in all {
        let text = std::fs::read_to_string(&p).unwrap();
        if p.extension().is_some_and(|e| e == "json") {
            let v: Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["config_hash"].as_str(), Some(hash.as_str()), "{}", p.display());
            assert!(v["grid"].is_string());
        } else {
            let head = text.lines().next().unwrap();
            assert!(head.starts_with("# layerlab ") && head.contains(&hash), "{}: {head}", p.display());
        }
        if p.extension().is_some_and(|e| e == "csv") {
            assert!(text.lines().next().unwrap().contains("grid: "), "{}", p.display());
        }
    }
}

#[test]
fn malformed_configs_exit_with_code_2() {
    for text in [
        "[chain]\nsequence = [0, 1]\n",
        "[potential]\nfamily = \"double_well\"\n[chain]\nsequence = [0, 1]\n[numerics]\nepsilon = [0.1]\n",
        "[potential]\nfamily = \"quartic\"\n[chain]\nsequence = [0, 1]\n",
        "not toml at all ===",
    ] {
        let lab = Lab::new(text);
        let o = lab.run(&["heteroclinic"]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        let e = error_json(&o);
        assert_eq!(e["error"], "config");
        assert_eq!(e["exit_code"], 2);
    }
    let lab = Lab::new("[chain]\nsequence = [0, 1]\n");
    assert!(error_json(&lab.run(&["heteroclinic"]))["message"].as_str().unwrap().contains("potential"));
}

#[test]
fn reruns_are_byte_identical() {
    let lab = Lab::new(DOUBLE_WELL);
    let other = lab.dir.path().join("again");
    for out in [lab.out(), other.clone()] {
        for cmd in ["heteroclinic", "spectrum", "stationary"] {
            assert!(lab.run_into(&[cmd], &out).status.success());
        }
    }
    let a = files(&lab.out());
    let b = files(&other);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.strip_prefix(lab.out()).unwrap(), y.strip_prefix(&other).unwrap());
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn stationary_refuses_the_triple_well_chain() {
    let lab = Lab::new(TRIPLE_WELL);
    lab.ok(&["heteroclinic"]);
    let o = lab.run(&["stationary"]);
    assert_eq!(o.status.code(), Some(4));
    let e = error_json(&o);
    assert_eq!(e["error"], "refused");
    assert_eq!(e["existence"]["exists"], Value::Bool(false));
    let varsigma: Vec<f64> =
        e["existence"]["varsigma"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(varsigma, vec![1.0, -1.0, 1.0, -1.0]);
}

#[test]
fn missing_artifacts_name_their_producer() {
    let lab = Lab::new(DOUBLE_WELL);
    for cmd in ["ansatz", "spectrum", "stationary", "pde-run", "ode-run", "compare"] {
        let o = lab.run(&[cmd]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        let e = error_json(&o);
        assert_eq!(e["producer"], "heteroclinic", "{cmd}");
        assert!(e["message"].as_str().unwrap().contains("layerlab heteroclinic"));
    }
    lab.ok(&["heteroclinic"]);
    let e = error_json(&lab.run(&["compare"]));
    assert_eq!(e["producer"], "pde-run");
    assert!(e["message"].as_str().unwrap().contains("layerlab pde-run"));
}

#[test]
fn spectrum_separates_the_slow_pair() {
    // equal gaps: the slow pair is exponentially small in 1/eps
    let lab = Lab::new(&DOUBLE_WELL.replace("gaps = [0.3, 0.7]\n", ""));
    lab.ok(&["heteroclinic"]);
    lab.ok(&["spectrum"]);
    let r = lab.json("spectrum_eps0.05.json");
    assert!(r["report"]["spectrum"]["gap_ratio"].as_f64().unwrap() > 1e4);
    assert_eq!(r["report"]["slow_count"], 2);
}

#[test]
fn compare_on_the_attraction_scenario() {
    let lab = Lab::new(DOUBLE_WELL);
    lab.ok(&["heteroclinic"]);
    lab.ok(&["pde-run"]);
    lab.ok(&["compare", "--emit-gnuplot"]);
    let r = &lab.json("compare_eps0.05.json")["report"];
    assert!(r["window_samples"].as_u64().unwrap() > 5);
    assert!(r["max_relative_gap_error_window"].as_f64().unwrap() <= 0.05);
    assert_eq!(r["signs_agree_window"], Value::Bool(true));
    assert!(lab.out().join("compare_eps0.05.gp").exists());

    let text = std::fs::read_to_string(lab.out().join("compare_eps0.05.csv")).unwrap();
    let cols: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    for c in ["t", "gap_pde0", "gap_ode1", "rel_err0", "max_rel_err", "v_measured0", "v_cbar1", "v_ode0"] {
        assert!(cols.contains(&c), "{c}");
    }
    let pde = &lab.json("pde_eps0.05.json")["report"];
    assert!(pde["max_energy_increase"].as_f64().unwrap() <= 1e-12);
    assert!(pde["exit"]["stopped"].as_str().unwrap().contains("rho/mu"));
}

#[test]
fn ode_run_follows_the_collapse() {
    let lab = Lab::new(DOUBLE_WELL);
    lab.ok(&["heteroclinic"]);
    lab.ok(&["ode-run"]);
    let r = &lab.json("ode_eps0.05.json")["report"];
    assert_eq!(r["collided"], Value::Bool(true));
    assert_eq!(r["collision_gap"], 0);
    let text = std::fs::read_to_string(lab.out().join("ode_eps0.05.csv")).unwrap();
    let gap0: Vec<f64> = text.lines().skip(2).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(gap0.len() > 10);
    assert!(gap0.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn eps_sweeps_write_one_artifact_per_value() {
    let config = DOUBLE_WELL.replace("[experiment]", "[numerics]\neps = [0.05, 0.04, 0.06]\n\n[experiment]");
    let lab = Lab::new(&config);
    lab.ok(&["heteroclinic"]);
    lab.ok(&["stationary", "--jobs", "2"]);
    for key in ["eps0.05", "eps0.04", "eps0.06"] {
        let r = lab.json(&format!("stationary_{key}.json"));
        for g in r["report"]["gaps_star"].as_array().unwrap() {
            assert!((g.as_f64().unwrap() - 0.5).abs() < 1e-3);
        }
    }
}

#[test]
fn numerical_failures_exit_with_code_3() {
    let config = DOUBLE_WELL.replace("[experiment]", "[numerics]\ndt = 20.0\nmin_dt = 15.0\n\n[experiment]");
    let lab = Lab::new(&config);
    lab.ok(&["heteroclinic"]);
    let o = lab.run(&["pde-run"]);
    assert_eq!(o.status.code(), Some(3));
    let e = error_json(&o);
    assert_eq!(e["error"], "numerical");
    assert_eq!(e["kind"], "stiffness");
}

#[test]
fn inadmissible_initial_layers_are_a_config_error() {
    let config = DOUBLE_WELL.replace("gaps = [0.3, 0.7]", "gaps = [0.01, 0.99]");
    let lab = Lab::new(&config);
    lab.ok(&["heteroclinic"]);
    let o = lab.run(&["ode-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_json(&o)["message"].as_str().unwrap().contains("rho/mu"));
}
