//! Pipeline stages. Each produces named checks, a JSON result block and
//! optionally a CSV table; the inviscid data is computed once and shared.

use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::{json, Value};
use weakkam::dynamics::{aubry_candidates, DynamicsOptions};
use weakkam::model::Family;
use weakkam::stochastic::{exit_time_scaling, lax_residual, DriftSource, ExitOptions, SdeConfig, TubeCentre};
use weakkam::variational::{build_kernels, ActionKernelSet, BarrierOptions, GridSpec, KernelOptions};
use weakkam::viscous::{rest_energy_bracket, residual_check, solve_cell, ViscousOptions};
use weakkam::vv_analysis::{
    example_verify, inviscid_analysis, rescale_check, slope_fit, sweep, AnalysisOptions, InviscidData,
};
use weakkam::Result;

use crate::config::ExperimentConfig;

/// Largest relative deviation of the finite-difference Hessian average
/// from `λ_i` that still passes.
const FD_TOL: f64 = 0.05;
/// Largest ratio of the regularity constants across the sweep.
const REGULARITY_FACTOR: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Command {
    Orbits,
    Critical,
    Barrier,
    Viscous,
    Sweep,
    Rescale,
    Example,
    Stochastic,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Orbits => "orbits",
            Self::Critical => "critical",
            Self::Barrier => "barrier",
            Self::Viscous => "viscous",
            Self::Sweep => "sweep",
            Self::Rescale => "rescale",
            Self::Example => "example",
            Self::Stochastic => "stochastic",
            Self::All => "all",
        }
    }
}

pub struct Table {
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

pub struct StageOutput {
    pub command: Command,
    pub checks: BTreeMap<String, bool>,
    pub results: Value,
    pub table: Option<Table>,
}

impl StageOutput {
    pub fn pass(&self) -> bool {
        self.checks.values().all(|&c| c)
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn analysis_options(cfg: &ExperimentConfig) -> AnalysisOptions<f64> {
    let n = &cfg.numerics;
    AnalysisOptions {
        kernel: KernelOptions { vmax: n.vmax, ..KernelOptions::default() },
        dynamics: DynamicsOptions { shoot_tol: n.shoot_tol, ..DynamicsOptions::default() },
        barrier: BarrierOptions { barrier_tol: n.barrier_tol, ..BarrierOptions::default() },
        viscous: ViscousOptions { cell_tol: n.cell_tol, max_periods: n.max_periods, ..ViscousOptions::default() },
        karp_limit: n.karp_limit,
        aubry_tol: n.aubry_tol,
        grid_tol: n.grid_tol,
        slope_tol: n.slope_tol,
        ..AnalysisOptions::default()
    }
}

pub struct Pipeline<'c> {
    cfg: &'c ExperimentConfig,
    opts: AnalysisOptions<f64>,
    grid: GridSpec,
    kernels: Option<ActionKernelSet<f64>>,
    inviscid: Option<InviscidData<f64>>,
    /// Seconds per stage, in execution order.
    pub wall_times: BTreeMap<String, f64>,
}

impl<'c> Pipeline<'c> {
    pub fn new(cfg: &'c ExperimentConfig) -> Self {
        Self {
            cfg,
            opts: analysis_options(cfg),
            grid: GridSpec::new(cfg.grid.nx, cfg.grid.nt),
            kernels: None,
            inviscid: None,
            wall_times: BTreeMap::new(),
        }
    }

    fn timed<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        let start = Instant::now();
        let out = f(self);
        *self.wall_times.entry(name.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }

    fn is_flat(&self) -> bool {
        let (lo, hi) = rest_energy_bracket(&self.cfg.model, self.grid);
        hi - lo <= 1e-12
    }

    fn kernels(&mut self) -> Result<&ActionKernelSet<f64>> {
        if self.kernels.is_none() {
            let k = self.timed("kernels", |p| build_kernels(&p.cfg.model, p.grid, &p.opts.kernel))?;
            self.kernels = Some(k);
        }
        Ok(self.kernels.as_ref().expect("just built"))
    }

    fn inviscid(&mut self) -> Result<&InviscidData<f64>> {
        if self.inviscid.is_none() {
            self.kernels()?;
            let data = self.timed("inviscid", |p| {
                inviscid_analysis(&p.cfg.model, p.kernels.as_ref().expect("built"), &p.opts)
            })?;
            self.inviscid = Some(data);
        }
        Ok(self.inviscid.as_ref().expect("just computed"))
    }

    /// Runs `command` and whatever it depends on. `All` yields one output
    /// per stage.
    pub fn run(&mut self, command: Command) -> Result<Vec<StageOutput>> {
        match command {
            Command::All => {
                let mut stages = vec![
                    Command::Orbits,
                    Command::Critical,
                    Command::Barrier,
                    Command::Viscous,
                    Command::Sweep,
                    Command::Rescale,
                ];
                if self.cfg.model.family == Family::TravelingWave {
                    stages.push(Command::Example);
                }
                stages.push(Command::Stochastic);
                stages.into_iter().map(|c| self.stage(c)).collect()
            }
            c => Ok(vec![self.stage(c)?]),
        }
    }

    fn stage(&mut self, command: Command) -> Result<StageOutput> {
        let name = command.name();
        let start = Instant::now();
        let out = match command {
            Command::Orbits => self.orbits(),
            Command::Critical => self.critical(),
            Command::Barrier => self.barrier(),
            Command::Viscous => self.viscous(),
            Command::Sweep => self.sweep(),
            Command::Rescale => self.rescale(),
            Command::Example => self.example(),
            Command::Stochastic => self.stochastic(),
            Command::All => unreachable!("expanded by run"),
        };
        *self.wall_times.entry(format!("stage.{name}")).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }

    fn orbits(&mut self) -> Result<StageOutput> {
        let mut checks = BTreeMap::new();
        if self.is_flat() {
            checks.insert("flat_no_orbits".into(), true);
            return Ok(StageOutput {
                command: Command::Orbits,
                checks,
                results: json!({ "flat": true, "orbits": [] }),
                table: None,
            });
        }
        let orbits = aubry_candidates(&self.cfg.model, &self.opts.dynamics)?;
        checks.insert("hyperbolic_candidate".into(), orbits.iter().any(|o| o.hyperbolic));
        let list: Vec<Value> = orbits
            .iter()
            .map(|o| {
                json!({
                    "anchor_x": o.anchor.x,
                    "anchor_p": o.anchor.p,
                    "period": o.period,
                    "winding": o.winding,
                    "monodromy": o.monodromy,
                    "monodromy_det": o.monodromy_det,
                    "floquet_exponents": o.floquet_exponents,
                    "hyperbolic": o.hyperbolic,
                    "residual": o.residual,
                })
            })
            .collect();
        Ok(StageOutput { command: Command::Orbits, checks, results: json!({ "flat": false, "orbits": list }), table: None })
    }

    fn critical(&mut self) -> Result<StageOutput> {
        let (lo, hi) = rest_energy_bracket(&self.cfg.model, self.grid);
        let karp_limit = self.opts.karp_limit;
        let power = self.opts.power;
        let nx = self.grid.nx;
        let k = self.kernels()?;
        let arcs = k.arc_count();
        let cv = if nx <= karp_limit {
            weakkam::variational::critical_value(k)?
        } else {
            weakkam::variational::critical_value_power(k, &power)?
        };
        let mut checks = BTreeMap::new();
        checks.insert("power_bracket".into(), cv.power_bracket.1 - cv.power_bracket.0 <= 1e-6);
        if let Some(karp) = cv.karp {
            checks.insert("karp_matches_power".into(), (karp - cv.power).abs() <= 1e-6);
        }
        // c(0) sits between the extremes of H(x, 0, t), up to the grid bias.
        let slack = self.opts.grid_tol;
        checks.insert("rest_energy_bracket".into(), cv.c >= lo - slack && cv.c <= hi + slack);
        Ok(StageOutput {
            command: Command::Critical,
            checks,
            results: json!({ "c": cv.c, "critical": cv, "rest_energy": [lo, hi], "arcs": arcs }),
            table: None,
        })
    }

    fn barrier(&mut self) -> Result<StageOutput> {
        let aubry_tol = self.opts.aubry_tol;
        let data = self.inviscid()?;
        let mut checks = BTreeMap::new();
        let flat = data.is_flat();
        if !flat {
            checks.insert("aubry_confirmed".into(), data.checks.iter().all(|c| c.pass && c.residual <= aubry_tol));
            checks.insert("fd_crosscheck".into(), data.fd.iter().all(|f| f.deviation <= FD_TOL));
            let phi_le_h = data
                .phi_pair
                .iter()
                .zip(&data.h_pair)
                .all(|(pr, hr)| pr.iter().zip(hr).all(|(p, h)| *p <= *h + 1e-9));
            checks.insert("phi_below_h".into(), phi_le_h);
        }
        let orbits: Vec<Value> = data
            .orbits
            .iter()
            .enumerate()
            .map(|(i, o)| {
                json!({
                    "anchor_x": o.anchor.x,
                    "period": o.period,
                    "lambda": data.curves[i].lambda,
                    "riccati_residual": data.curves[i].riccati_residual,
                    "aubry_residual": data.checks[i].residual,
                    "fd_average": data.fd[i].fd_average,
                    "fd_deviation": data.fd[i].deviation,
                    "window_osc": data.fields[i].window_osc,
                    "sweeps": data.fields[i].sweeps,
                })
            })
            .collect();
        let results = json!({
            "c": data.c0(),
            "flat": flat,
            "window": data.window,
            "orbits": orbits,
            "rejected": data.rejected,
            "lambda_bar": data.summary.lambda_bar,
            "selected": data.summary.argmin,
            "h_pair": data.h_pair,
            "phi_pair": data.phi_pair,
        });
        let table = data.selected().first().map(|&i| {
            let f = &data.fields[i];
            let g = f.grid;
            let mut rows = Vec::with_capacity(g.nx * g.nt);
            for layer in 0..g.nt {
                for node in 0..g.nx {
                    rows.push(vec![
                        node.to_string(),
                        layer.to_string(),
                        num(g.x(node)),
                        num(g.t(layer)),
                        num(f.h_at(node, layer)),
                        num(f.phi_at(node, layer)),
                    ]);
                }
            }
            Table { header: &["x_index", "t_index", "x", "t", "h", "phi_pot"], rows }
        });
        Ok(StageOutput { command: Command::Barrier, checks, results, table })
    }

    fn viscous(&mut self) -> Result<StageOutput> {
        let eps = self.cfg.sweep.viscous_epsilon.unwrap_or(self.cfg.sweep.eps_list[0]);
        let anchor_x = self.inviscid()?.selected_x();
        let sol = solve_cell(&self.cfg.model, eps, self.grid, anchor_x, &self.opts.viscous)?;
        let residual = residual_check(&self.cfg.model, &sol);
        let (lo, hi) = sol.c_bracket;
        let c_tol = self.opts.viscous.c_tol;
        let mut checks = BTreeMap::new();
        checks.insert("c_bracket".into(), sol.c_eps >= lo - c_tol && sol.c_eps <= hi + c_tol);
        checks.insert("periodicity".into(), sol.periodicity_residual <= self.opts.viscous.cell_tol);
        let results = json!({
            "epsilon": sol.epsilon,
            "c_eps": sol.c_eps,
            "anchor": sol.anchor,
            "lip_x": sol.lip_x,
            "semiconvexity_const": sol.semiconvexity_const,
            "periodicity_residual": sol.periodicity_residual,
            "residual": residual,
            "c_bracket": sol.c_bracket,
            "periods": sol.periods,
            "steps_per_substep": sol.steps_per_substep,
        });
        let g = sol.grid;
        let mut rows = Vec::with_capacity(g.nx * g.nt);
        for layer in 0..g.nt {
            for node in 0..g.nx {
                rows.push(vec![
                    node.to_string(),
                    layer.to_string(),
                    num(g.x(node)),
                    num(g.t(layer)),
                    num(sol.phi_at(node, layer)),
                ]);
            }
        }
        let table = Some(Table { header: &["x_index", "t_index", "x", "t", "phi"], rows });
        Ok(StageOutput { command: Command::Viscous, checks, results, table })
    }

    fn sweep(&mut self) -> Result<StageOutput> {
        self.inviscid()?;
        let data = self.inviscid.as_ref().expect("computed");
        let (report, _) = sweep(&self.cfg.model, data, &self.cfg.sweep.eps_list, &self.opts)?;
        let mut checks = BTreeMap::new();
        let verdict = slope_fit(&report, self.opts.slope_tol);
        if data.is_flat() {
            checks.insert("flat_constant_c".into(), report.c_records.iter().all(|c| (c - report.c0).abs() <= 1e-9));
        } else {
            checks.insert("slope".into(), verdict.pass);
        }
        checks.insert("limit_trend".into(), report.limit_trend_ok(self.opts.trend_slack));
        let (lip, semi) = report.regularity_spread();
        // 0/0 only when every constant vanishes, which is uniform too.
        let uniform = |r: f64| r.is_nan() || r <= REGULARITY_FACTOR;
        checks.insert("regularity".into(), uniform(lip) && uniform(semi));
        let rows = report
            .records
            .iter()
            .map(|r| {
                vec![
                    num(r.epsilon),
                    num(r.c_eps),
                    num(r.secant),
                    num(r.limit_error),
                    num(r.grad_error),
                    num(r.lip_x),
                    num(r.semiconvexity_const),
                ]
            })
            .collect();
        let results = json!({ "report": report, "slope": verdict, "regularity_spread": [lip, semi] });
        let table = Some(Table {
            header: &["epsilon", "c_eps", "secant", "limit_error", "grad_error", "lip_x", "semiconvexity_const"],
            rows,
        });
        Ok(StageOutput { command: Command::Sweep, checks, results, table })
    }

    fn rescale(&mut self) -> Result<StageOutput> {
        self.inviscid()?;
        let data = self.inviscid.as_ref().expect("computed");
        let report = rescale_check(&self.cfg.model, data, &self.opts)?;
        let mut checks = BTreeMap::new();
        checks.insert("rescale_identity".into(), report.pass);
        Ok(StageOutput { command: Command::Rescale, checks, results: json!({ "report": report }), table: None })
    }

    fn example(&mut self) -> Result<StageOutput> {
        let model = &self.cfg.model;
        if model.family != Family::TravelingWave {
            return Err(weakkam::Error::Config(format!(
                "model.family: the example needs TravelingWave, got {:?}",
                model.family
            )));
        }
        let run = example_verify(model.wind, model.potential.clone(), self.grid, &self.opts)?;
        let r = &run.report;
        let mut checks = BTreeMap::new();
        checks.insert("anchors".into(), r.anchors_pass);
        checks.insert("riccati".into(), r.riccati_pass);
        checks.insert("fd_crosscheck".into(), r.fd_pass);
        checks.insert("shift".into(), r.shift_pass);
        Ok(StageOutput { command: Command::Example, checks, results: json!({ "report": r }), table: None })
    }

    fn stochastic(&mut self) -> Result<StageOutput> {
        self.inviscid()?;
        let cfg = self.cfg;
        let s = &cfg.stochastic;
        let data = self.inviscid.as_ref().expect("computed");
        let model = &cfg.model;
        let selected = data.selected().first().copied();
        let (drift, centre) = match selected {
            Some(i) => (
                DriftSource::BarrierDrift {
                    field: &data.fields[i],
                    orbit: &data.orbits[i],
                    radius: s.drift_radius,
                    stencil: 1,
                },
                TubeCentre::Orbit(&data.orbits[i]),
            ),
            None => (DriftSource::Zero, TubeCentre::Fixed(0.0)),
        };
        let sol = solve_cell(model, s.lax_epsilon, self.grid, data.selected_x(), &self.opts.viscous)?;
        let probes: Vec<(f64, f64)> = s.probes.iter().map(|&x| (x, 0.0)).collect();

        let mut exits = Vec::new();
        let mut laxes = Vec::new();
        let mut rows = Vec::new();
        let mut checks = BTreeMap::new();
        let seeds = cfg.seeds();
        for &seed in &seeds {
            let opts = ExitOptions { delta: s.delta, n_paths: s.exit_paths, t_cap: s.kappa, dt: s.dt, seed };
            let exit = exit_time_scaling(model, &drift, centre, &s.eps_list, &opts)?;
            let sde = SdeConfig {
                n_paths: s.n_paths,
                dt: s.lax_dt,
                seed: seed.wrapping_add(1000),
                t_cap: s.lax_kappa,
                start_x: 0.0,
                start_t: 0.0,
            };
            let lax = lax_residual(model, &sol, &probes, &sde, s.lax_tol)?;
            let suffix = if seeds.len() > 1 { format!(".seed{seed}") } else { String::new() };
            // Without an Aubry orbit there is nothing to be attracted to.
            if selected.is_some() {
                checks.insert(format!("exit_scaling{suffix}"), exit.pass);
            }
            checks.insert(format!("lax_formula{suffix}"), lax.pass);
            rows.extend(exit.records.iter().map(|r| {
                vec![
                    num(r.epsilon),
                    r.n_paths.to_string(),
                    num(r.mean_tau),
                    num(r.ci_low),
                    num(r.ci_high),
                    num(r.eps_log_mean_tau),
                    num(r.capped_fraction),
                ]
            }));
            exits.push(json!({ "seed": seed, "report": exit }));
            laxes.push(json!({ "seed": sde.seed, "report": lax }));
        }
        let results = json!({
            "lax_solution": { "epsilon": sol.epsilon, "c_eps": sol.c_eps, "anchor": sol.anchor },
            "exit": exits,
            "lax": laxes,
        });
        let table = Some(Table {
            header: &["epsilon", "n_paths", "mean_tau", "ci_low", "ci_high", "eps_log_mean_tau", "capped_fraction"],
            rows,
        });
        Ok(StageOutput { command: Command::Stochastic, checks, results, table })
    }
}
