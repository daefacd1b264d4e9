use std::path::PathBuf;

use layerlab::chain::{c0, default_grid_points, AnsatzFields, ChainModel, Existence, LayerConfig};
use layerlab::grid::GridFunction;
use layerlab::heteroclinic::{ConnectionDiagnostics, ConnectionOptions, Heteroclinic, Tail};
use layerlab::layer_ode::{self, OdeOptions};
use layerlab::pde::{self, ExitReason, LayerObserver, PdeOptions, RunOptions};
use layerlab::potential::Potential;
use layerlab::reduction::{self, BifurcationOptions, SpectrumOptions, SpectrumSummary};
use layerlab::tracking::{ProjectOptions, TrackSample};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;
use crate::output::{eps_key, indexed, read_csv, Context};

const CONNECTION_DIR: &str = "connections";

fn connection_dir(ctx: &Context) -> PathBuf {
    ctx.config.chain.connections.clone().unwrap_or_else(|| ctx.path(CONNECTION_DIR))
}

fn connection_file(j: usize) -> String {
    format!("layer_{j}.csv")
}

fn connection_options(ctx: &Context) -> ConnectionOptions {
    let num = &ctx.config.numerics;
    ConnectionOptions {
        half_length: num.half_length,
        points: num.connection_points,
        newton_tol: num.newton_tol,
        ..Default::default()
    }
}

fn potential(ctx: &Context) -> Result<Potential, CliError> {
    let pot = ctx.config.build_potential()?;
    pot.validate_minima()?;
    pot.spot_check_positive(2000, ctx.config.seed)?;
    Ok(pot)
}

/// Chain built from the connection files written by `heteroclinic`.
fn load_chain(ctx: &Context) -> Result<ChainModel, CliError> {
    let pot = potential(ctx)?;
    let dir = connection_dir(ctx);
    let seq = &ctx.config.chain.sequence;
    let mut connections = Vec::with_capacity(seq.len());
    for j in 0..seq.len() {
        let path = dir.join(connection_file(j));
        if !path.exists() {
            return Err(CliError::MissingArtifact { path, producer: "heteroclinic" });
        }
        let het = Heteroclinic::read_csv(&path)
            .map_err(|e| CliError::Config(format!("{}: {e}; rerun `layerlab heteroclinic`", path.display())))?;
        connections.push(het);
    }
    ChainModel::from_connections(&pot, seq, connections)
        .map_err(|e| CliError::Config(format!("connection files in {} do not fit the chain: {e}", dir.display())))
}

/// Runs `job` for every eps of the sweep on the current rayon pool; the first
/// failure in sweep order wins.
fn sweep<T: Send>(ctx: &Context, job: impl Fn(f64) -> Result<T, CliError> + Sync) -> Result<Vec<T>, CliError> {
    let results: Vec<Result<T, CliError>> = ctx.config.numerics.eps.par_iter().map(|&e| job(e)).collect();
    results.into_iter().collect()
}

struct Setup {
    cfg: LayerConfig,
    n: usize,
    grid: String,
}

fn setup(ctx: &Context, chain: &ChainModel, eps: f64) -> Result<Setup, CliError> {
    let nl = chain.len();
    let rho = ctx.config.numerics.rho.unwrap_or_else(|| chain.default_rho());
    let equal = vec![1.0; nl];
    let gaps = ctx.config.experiment.gaps.as_deref().unwrap_or(&equal);
    let cfg = LayerConfig::from_gaps(ctx.config.experiment.xi0, gaps, eps, rho)?;
    cfg.validate(chain).map_err(|e| CliError::Config(format!("initial layers at eps = {eps}: {e}")))?;
    let n = ctx.config.numerics.n.unwrap_or_else(|| default_grid_points(eps, nl));
    Ok(Setup { cfg, n, grid: format!("eps={eps} n={n} h={:?} rho={rho:?}", 1.0 / n as f64) })
}

fn profile_rows(u: &GridFunction) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut cols = vec!["x".to_string()];
    cols.extend(indexed("u", u.m()));
    let rows = (0..u.n())
        .map(|i| {
            let mut r = vec![u.x(i)];
            r.extend_from_slice(u.point(i));
            r
        })
        .collect();
    (cols, rows)
}

// ---------------------------------------------------------------- heteroclinic

#[derive(Serialize)]
struct ConnectionReport<'a> {
    layer: usize,
    a_minus: &'a [f64],
    a_plus: &'a [f64],
    action: f64,
    qbar2: f64,
    half_length: f64,
    points: usize,
    left: &'a Tail,
    right: &'a Tail,
    diagnostics: &'a ConnectionDiagnostics,
    file: String,
}

#[derive(Serialize)]
struct ChainReport<'a> {
    sequence: &'a [usize],
    minima: &'a [Vec<f64>],
    mu_minus: &'a [f64],
    mu_plus: &'a [f64],
    mu: &'a [f64],
    k_minus: &'a [f64],
    k_plus: &'a [f64],
    k: &'a [f64],
    varsigma_raw: &'a [f64],
    varsigma: &'a [f64],
    qbar2: &'a [f64],
    h4: bool,
    default_rho: f64,
    existence: Existence,
}

#[derive(Serialize)]
struct HeteroclinicReport<'a> {
    potential: String,
    connections: Vec<ConnectionReport<'a>>,
    chain: ChainReport<'a>,
}

fn chain_report(chain: &ChainModel) -> ChainReport<'_> {
    ChainReport {
        sequence: &chain.sequence,
        minima: &chain.minima,
        mu_minus: &chain.mu_minus,
        mu_plus: &chain.mu_plus,
        mu: &chain.mu,
        k_minus: &chain.k_minus,
        k_plus: &chain.k_plus,
        k: &chain.k,
        varsigma_raw: &chain.varsigma_raw,
        varsigma: &chain.varsigma,
        qbar2: &chain.qbar2,
        h4: chain.h4,
        default_rho: chain.default_rho(),
        existence: chain.existence_condition(),
    }
}

pub fn heteroclinic(ctx: &Context) -> Result<(), CliError> {
    let pot = potential(ctx)?;
    let chain = ChainModel::assemble(&pot, &ctx.config.chain.sequence, &connection_options(ctx))?;
    let dir = connection_dir(ctx);
    let mut connections = Vec::new();
    for (j, het) in chain.connections.iter().enumerate() {
        let grid = format!("half_length={:?} points={}", het.half_length(), het.points());
        let path = dir.join(connection_file(j));
        crate::output::write(&path, &het.to_csv(&ctx.header(&grid)))?;
        connections.push(ConnectionReport {
            layer: j,
            a_minus: &het.a_minus,
            a_plus: &het.a_plus,
            action: het.action,
            qbar2: het.qbar2(),
            half_length: het.half_length(),
            points: het.points(),
            left: &het.left,
            right: &het.right,
            diagnostics: &het.diagnostics,
            file: connection_file(j),
        });
    }
    let report = HeteroclinicReport { potential: pot.name(), connections, chain: chain_report(&chain) };
    ctx.write_json("heteroclinic.json", "connection intervals listed per connection", &report)
}

// ---------------------------------------------------------------- ansatz

#[derive(Serialize)]
struct AnsatzReport {
    eps: f64,
    n: usize,
    xi: Vec<f64>,
    gaps: Vec<f64>,
    margins: Vec<f64>,
    residual_norm: f64,
    tangent_norms: Vec<f64>,
    cbar: Vec<f64>,
    c0: Vec<f64>,
}

pub fn ansatz(ctx: &Context) -> Result<(), CliError> {
    let chain = load_chain(ctx)?;
    sweep(ctx, |eps| {
        let s = setup(ctx, &chain, eps)?;
        let fields = AnsatzFields::new(&chain, &s.cfg, s.n)?;
        let key = eps_key(eps);
        let (mut cols, mut rows) = profile_rows(&fields.u);
        cols.extend(indexed("residual", fields.u.m()));
        for (i, r) in rows.iter_mut().enumerate() {
            r.extend_from_slice(fields.residual.point(i));
        }
        ctx.write_csv(&format!("ansatz_{key}.csv"), &s.grid, &cols, &rows)?;
        let report = AnsatzReport {
            eps,
            n: s.n,
            xi: s.cfg.xi.clone(),
            gaps: s.cfg.gaps(),
            margins: s.cfg.margins(&chain),
            residual_norm: fields.residual_norm(),
            tangent_norms: fields.tangent_norms.clone(),
            cbar: fields.cbar(),
            c0: c0(&chain, &s.cfg)?,
        };
        ctx.write_json(&format!("ansatz_{key}.json"), &s.grid, &report)
    })?;
    Ok(())
}

// ---------------------------------------------------------------- spectrum

#[derive(Serialize)]
struct SpectrumReport {
    eps: f64,
    n: usize,
    xi: Vec<f64>,
    gaps: Vec<f64>,
    slow_count: usize,
    spectrum: SpectrumSummary,
}

fn spectrum_options(ctx: &Context) -> SpectrumOptions {
    SpectrumOptions { seed: ctx.config.seed, ..Default::default() }
}

pub fn spectrum(ctx: &Context) -> Result<(), CliError> {
    let chain = load_chain(ctx)?;
    sweep(ctx, |eps| {
        let s = setup(ctx, &chain, eps)?;
        let (_, spec) = reduction::linearized_spectrum(&chain, &s.cfg, s.n, &spectrum_options(ctx))?;
        let report = SpectrumReport {
            eps,
            n: s.n,
            xi: s.cfg.xi.clone(),
            gaps: s.cfg.gaps(),
            slow_count: spec.slow_count(),
            spectrum: spec.summary(),
        };
        ctx.write_json(&format!("spectrum_{}.json", eps_key(eps)), &s.grid, &report)
    })?;
    Ok(())
}

// ---------------------------------------------------------------- stationary

pub fn stationary(ctx: &Context) -> Result<(), CliError> {
    let chain = load_chain(ctx)?;
    let existence = chain.existence_condition();
    if existence.exists != Some(true) {
        return Err(CliError::Refused {
            message: format!("no periodic layered solution for this chain: {}", existence.reason),
            existence: Some(existence),
        });
    }
    let num = &ctx.config.numerics;
    let opts = BifurcationOptions {
        xi0: ctx.config.experiment.xi0,
        n: num.n,
        rho: num.rho,
        spectrum: spectrum_options(ctx),
        ..Default::default()
    };
    sweep(ctx, |eps| {
        let b = reduction::solve_bifurcation(&chain, eps, &opts)?;
        let grid = format!("eps={eps} n={} h={:?} rho={:?}", b.n, 1.0 / b.n as f64, b.root.rho);
        let key = eps_key(eps);
        let (cols, rows) = profile_rows(&b.u);
        ctx.write_csv(&format!("stationary_{key}.csv"), &grid, &cols, &rows)?;
        ctx.write_json(&format!("stationary_{key}.json"), &grid, &b)
    })?;
    Ok(())
}

// ---------------------------------------------------------------- pde-run

#[derive(Serialize)]
struct PdeReport {
    eps: f64,
    n: usize,
    rho: f64,
    xi_initial: Vec<f64>,
    t_final: f64,
    energy_initial: f64,
    energy_final: f64,
    steps: usize,
    rejected: usize,
    dt_final: f64,
    max_energy_increase: f64,
    exit: ExitReason,
    tracked_samples: usize,
    tracker_failure: Option<String>,
    xi_final: Option<Vec<f64>>,
    gaps_final: Option<Vec<f64>>,
}

const TRACK_FILE_PREFIX: &str = "pde_track_";

fn track_columns(nl: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for p in ["xi", "gap"] {
        cols.extend(indexed(p, nl));
    }
    cols.extend(["w_norm", "w_norm_w12", "ansatz_residual"].map(String::from));
    for p in ["v_measured", "v_cbar", "v_ode"] {
        cols.extend(indexed(p, nl));
    }
    cols
}

fn track_row(s: &TrackSample) -> Vec<f64> {
    let nl = s.xi.len();
    let mut r = vec![s.t];
    r.extend_from_slice(&s.xi);
    r.extend_from_slice(&s.gaps);
    r.extend([s.w_norm, s.w_norm_w12, s.ansatz_residual]);
    match &s.measured_velocity {
        Some(v) => r.extend_from_slice(v),
        None => r.extend(std::iter::repeat(f64::NAN).take(nl)),
    }
    r.extend_from_slice(&s.cbar_velocity);
    r.extend_from_slice(&s.ode_velocity);
    r
}

pub fn pde_run(ctx: &Context) -> Result<(), CliError> {
    let chain = load_chain(ctx)?;
    let num = &ctx.config.numerics;
    let ex = &ctx.config.experiment;
    let pde_opts = PdeOptions {
        dt: num.dt,
        min_dt: num.min_dt,
        energy_slack: num.energy_slack,
        regrow_after: num.regrow_after,
        ..Default::default()
    };
    let run_opts = RunOptions {
        t_end: ex.t_end,
        snapshot_every: ex.snapshot_every,
        keep_snapshots: false,
        max_steps: ex.max_steps,
    };
    let proj = ProjectOptions { tol: num.projection_tol, ..Default::default() };
    sweep(ctx, |eps| {
        let s = setup(ctx, &chain, eps)?;
        let u0 = AnsatzFields::new(&chain, &s.cfg, s.n)?.u;
        let mut obs = LayerObserver::new(&chain, Some(s.cfg.clone()), s.cfg.rho, proj.clone());
        let out = pde::run(chain.potential(), u0, &pde_opts, &run_opts, &mut [&mut obs])?;
        let tr = obs.trajectory();
        let key = eps_key(eps);
        let energy: Vec<Vec<f64>> = out.energies.iter().map(|&(t, e)| vec![t, e]).collect();
        ctx.write_csv(&format!("pde_energy_{key}.csv"), &s.grid, &["t".into(), "energy".into()], &energy)?;
        let rows: Vec<Vec<f64>> = tr.samples.iter().map(track_row).collect();
        ctx.write_csv(&format!("{TRACK_FILE_PREFIX}{key}.csv"), &s.grid, &track_columns(chain.len()), &rows)?;
        let (cols, rows) = profile_rows(&out.state.u);
        ctx.write_csv(&format!("pde_final_{key}.csv"), &s.grid, &cols, &rows)?;
        let last = tr.samples.last();
        let report = PdeReport {
            eps,
            n: s.n,
            rho: s.cfg.rho,
            xi_initial: s.cfg.xi.clone(),
            t_final: out.state.t,
            energy_initial: out.energies[0].1,
            energy_final: out.state.energy,
            steps: out.steps,
            rejected: out.rejected,
            dt_final: out.dt,
            max_energy_increase: out.max_energy_increase,
            exit: out.exit.clone(),
            tracked_samples: tr.samples.len(),
            tracker_failure: obs.failure.clone(),
            xi_final: last.map(|s| s.xi.clone()),
            gaps_final: last.map(|s| s.gaps.clone()),
        };
        ctx.write_json(&format!("pde_{key}.json"), &s.grid, &report)
    })?;
    Ok(())
}

// ---------------------------------------------------------------- ode-run

#[derive(Serialize)]
struct OdeReport {
    eps: f64,
    rho: f64,
    xi_initial: Vec<f64>,
    collided: bool,
    collision_gap: Option<usize>,
    t_final: f64,
    xi_final: Vec<f64>,
    gaps_final: Vec<f64>,
    steps: usize,
    rejected: usize,
}

fn ode_options(ctx: &Context) -> OdeOptions {
    OdeOptions { rtol: ctx.config.numerics.ode_rtol, atol: ctx.config.numerics.ode_atol, ..Default::default() }
}

fn output_times(t_end: f64, every: f64) -> Vec<f64> {
    let count = (t_end / every * (1.0 + 1e-12)).floor() as usize;
    let mut times: Vec<f64> = (0..=count).map(|k| k as f64 * every).collect();
    if times.last().is_some_and(|&t| t < t_end) {
        times.push(t_end);
    }
    times
}

pub fn ode_run(ctx: &Context) -> Result<(), CliError> {
    let chain = load_chain(ctx)?;
    let ex = &ctx.config.experiment;
    let times = output_times(ex.t_end, ex.snapshot_every);
    sweep(ctx, |eps| {
        let s = setup(ctx, &chain, eps)?;
        let tr = layer_ode::integrate_at(&chain, &s.cfg, &times, &ode_options(ctx))?;
        let nl = chain.len();
        let mut cols = vec!["t".to_string()];
        cols.extend(indexed("xi", nl));
        cols.extend(indexed("gap", nl));
        cols.push("interaction_energy".into());
        let rows: Vec<Vec<f64>> = tr
            .states
            .iter()
            .map(|st| {
                let mut r = vec![st.t];
                r.extend_from_slice(&st.xi);
                r.extend_from_slice(&st.gaps);
                r.push(st.energy.map_or(f64::NAN, |e| e.interaction));
                r
            })
            .collect();
        let key = eps_key(eps);
        let grid = format!("eps={eps} rho={:?}", s.cfg.rho);
        ctx.write_csv(&format!("ode_{key}.csv"), &grid, &cols, &rows)?;
        let last = tr.states.last().expect("initial state is always recorded");
        let report = OdeReport {
            eps,
            rho: s.cfg.rho,
            xi_initial: s.cfg.xi.clone(),
            collided: tr.collided,
            collision_gap: tr.collision_gap,
            t_final: last.t,
            xi_final: last.xi.clone(),
            gaps_final: last.gaps.clone(),
            steps: tr.steps,
            rejected: tr.rejected,
        };
        ctx.write_json(&format!("ode_{key}.json"), &grid, &report)
    })?;
    Ok(())
}

// ---------------------------------------------------------------- compare

#[derive(Serialize)]
struct CompareReport {
    eps: f64,
    window_gap: f64,
    samples: usize,
    window_samples: usize,
    max_relative_gap_error_window: Option<f64>,
    max_relative_gap_error: Option<f64>,
    signs_agree_window: bool,
    ode_collided: bool,
    ode_collision_t: Option<f64>,
}

pub fn compare(ctx: &Context) -> Result<(), CliError> {
    let chain = load_chain(ctx)?;
    let nl = chain.len();
    let window_gap = ctx.config.experiment.window_gap;
    sweep(ctx, |eps| {
        let key = eps_key(eps);
        let (cols, rows) = read_csv(&ctx.path(&format!("{TRACK_FILE_PREFIX}{key}.csv")), "pde-run")?;
        if cols != track_columns(nl) {
            return Err(CliError::Config(format!("{TRACK_FILE_PREFIX}{key}.csv has unexpected columns; rerun `layerlab pde-run`")));
        }
        if rows.is_empty() {
            return Err(CliError::Config(format!("{TRACK_FILE_PREFIX}{key}.csv holds no samples; rerun `layerlab pde-run`")));
        }
        let col = |name: &str, j: usize| cols.iter().position(|c| *c == format!("{name}{j}")).unwrap();
        let t0 = rows[0][0];
        let xi0: Vec<f64> = (0..nl).map(|j| rows[0][col("xi", j)]).collect();
        let rho = ctx.config.numerics.rho.unwrap_or_else(|| chain.default_rho());
        let cfg = LayerConfig::new(xi0, eps, rho)?;
        let times: Vec<f64> = rows.iter().map(|r| r[0] - t0).collect();
        let ode = layer_ode::integrate_at(&chain, &cfg, &times, &ode_options(ctx))?;

        let mut out_cols = vec!["t".to_string()];
        for p in ["gap_pde", "gap_ode", "rel_err"] {
            out_cols.extend(indexed(p, nl));
        }
        out_cols.extend(["max_rel_err", "in_window"].map(String::from));
        for p in ["v_measured", "v_cbar", "v_ode"] {
            out_cols.extend(indexed(p, nl));
        }
        out_cols.push("signs_agree".into());

        let mut out_rows = Vec::new();
        let (mut worst_window, mut worst_all): (Option<f64>, Option<f64>) = (None, None);
        let mut window_samples = 0;
        let mut signs_ok = true;
        for (r, (st, &t)) in rows.iter().zip(ode.states.iter().zip(&times)) {
            // past an ODE collision the states no longer sit on the requested times
            if (st.t - t).abs() > 1e-9 * t.max(1.0) {
                break;
            }
            let gp: Vec<f64> = (0..nl).map(|j| r[col("gap", j)]).collect();
            let rel: Vec<f64> = (0..nl).map(|j| (gp[j] - st.gaps[j]).abs() / st.gaps[j]).collect();
            let max_rel = rel.iter().cloned().fold(0.0, f64::max);
            let in_window = gp.iter().all(|&g| g >= window_gap);
            let vel = |name: &str| -> Vec<f64> { (0..nl).map(|j| r[col(name, j)]).collect() };
            let (vm, vc, vo) = (vel("v_measured"), vel("v_cbar"), vel("v_ode"));
            let agree = (0..nl).all(|j| {
                !vm[j].is_finite() || (vm[j].signum() == vc[j].signum() && vc[j].signum() == vo[j].signum())
            });
            worst_all = Some(worst_all.map_or(max_rel, |w| w.max(max_rel)));
            if in_window {
                window_samples += 1;
                worst_window = Some(worst_window.map_or(max_rel, |w| w.max(max_rel)));
                signs_ok &= agree;
            }
            let mut row = vec![r[0]];
            row.extend(&gp);
            row.extend(&st.gaps);
            row.extend(&rel);
            row.extend([max_rel, in_window as u8 as f64]);
            row.extend(vm.iter().chain(&vc).chain(&vo));
            row.push(agree as u8 as f64);
            out_rows.push(row);
        }
        let grid = format!("eps={eps} rho={rho:?}");
        ctx.write_csv(&format!("compare_{key}.csv"), &grid, &out_cols, &out_rows)?;
        let report = CompareReport {
            eps,
            window_gap,
            samples: out_rows.len(),
            window_samples,
            max_relative_gap_error_window: worst_window,
            max_relative_gap_error: worst_all,
            signs_agree_window: signs_ok,
            ode_collided: ode.collided,
            ode_collision_t: ode.collided.then(|| ode.states.last().unwrap().t + t0),
        };
        ctx.write_json(&format!("compare_{key}.json"), &grid, &report)
    })?;
    Ok(())
}
