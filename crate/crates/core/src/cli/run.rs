//! Subcommand execution. Everything is computed in memory first; the caller
//! writes the artifacts only when the run succeeded.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::chain::{simulate, ChainConfig, InitialLaw};
use crate::cli::output::{alpha_label, dat, moments_csv, path_csv, path_dats, report_json, table_csv, Artifact};
use crate::cli::scenario::{Environment, Scenario};
use crate::cli::Command;
use crate::environment::{discretize, sample_env, EnvPath};
use crate::error::{Error, Result};
use crate::lab::{generator_gap_scan, mamwid_convergence, mamwidams_moment_test, quenched_annealed_test};
use crate::limit::{simulate_diffusion, solve_limit_ode, DiffusionConfig};
use crate::moments::{dirichlet_moments, point_mass_moments, solve_moment_hierarchy, MomentBlock, NORMALIZATION_TOL};
use crate::rng::{replicate_rng, stream_id};
use crate::simplex::{counts_to_point, SimplexPoint};

const ARM_ENV: u64 = 100;
const ARM_CHAIN: u64 = 101;
const ARM_DIFFUSION: u64 = 102;
const ARM_INITIAL: u64 = 103;

/// Relative tolerance on the per-doubling gap ratio in `generator-check`.
const GAP_RATIO_TOL: f64 = 0.2;
/// Gap allowed for linear test functions.
const LINEAR_GAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub gate_passed: bool,
    pub summary: Option<String>,
}

fn config(e: crate::cli::scenario::ConfigError) -> Error {
    Error::InvalidArgument(e.to_string())
}

fn environment(s: &Scenario) -> Result<Environment> {
    s.environment().map_err(config)
}

/// Environment of replicate `i`: the fixed one, or a fresh draw.
fn env_for(s: &Scenario, env: &Environment, i: u64) -> EnvPath {
    match env {
        Environment::Fixed(p) => p.clone(),
        Environment::Random(spec) => sample_env(spec, s.t_end, &mut replicate_rng(s.seed, stream_id(ARM_ENV, i))),
    }
}

fn fixed_env(env: &Environment, cmd: &str) -> Result<EnvPath> {
    match env {
        Environment::Fixed(p) => Ok(p.clone()),
        Environment::Random(_) => Err(Error::InvalidArgument(format!(
            "`{cmd}` needs a deterministic environment; use `annealed` for random ones"
        ))),
    }
}

/// Deterministic starting point for subcommands that need one.
fn start_point(s: &Scenario, law: &InitialLaw, cmd: &str) -> Result<SimplexPoint> {
    match law {
        InitialLaw::Point(p) => Ok(p.clone()),
        InitialLaw::Counts(c) => Ok(counts_to_point(c)),
        InitialLaw::Dirichlet(_) => Err(Error::InvalidArgument(format!(
            "`{cmd}` needs a point or counts initial condition (scenario {})",
            s.name
        ))),
    }
}

fn initial_moments(law: &InitialLaw, n_max: usize) -> Result<Vec<DVector<f64>>> {
    match law {
        InitialLaw::Point(p) => point_mass_moments(p, n_max),
        InitialLaw::Counts(c) => point_mass_moments(&counts_to_point(c), n_max),
        InitialLaw::Dirichlet(alpha) => dirichlet_moments(alpha, n_max),
    }
}

fn replicate_name(dir: &str, i: usize) -> String {
    format!("{dir}/path_{i:04}.csv")
}

fn simulate_cmd(s: &Scenario, plot: bool) -> Result<Outcome> {
    let env = environment(s)?;
    let law = s.initial_law().map_err(config)?;
    let n = s.population();
    let paths = (0..s.replicates as u64)
        .into_par_iter()
        .map(|i| {
            let e = env_for(s, &env, i);
            let cfg = ChainConfig::new(
                s.model.chain_model(),
                n,
                discretize(&e, n as usize, s.t_end)?,
                s.t_end,
                law.clone(),
            )?;
            simulate(&cfg, &mut replicate_rng(s.seed, stream_id(ARM_CHAIN, i)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut artifacts = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        artifacts.push(Artifact {
            name: replicate_name("simulate", i),
            content: path_csv(s, p),
        });
        if plot {
            artifacts.extend(path_dats(s, &format!("simulate/path_{i:04}"), p));
        }
    }
    Ok(Outcome {
        summary: Some(format!("simulate: {} paths at N = {n}", paths.len())),
        artifacts,
        gate_passed: true,
    })
}

fn limit_ode_cmd(s: &Scenario, plot: bool) -> Result<Outcome> {
    let env = environment(s)?;
    let x0 = start_point(s, &s.initial_law().map_err(config)?, "limit-ode")?;
    let draws = match env {
        Environment::Fixed(_) => 1,
        Environment::Random(_) => s.replicates,
    };
    let mut artifacts = Vec::new();
    for i in 0..draws {
        let path = solve_limit_ode(&env_for(s, &env, i as u64), &x0, s.t_end, s.solver.h)?;
        let stem = if draws == 1 {
            "limit_ode".to_string()
        } else {
            format!("limit_ode/path_{i:04}")
        };
        artifacts.push(Artifact {
            name: format!("{stem}.csv"),
            content: path_csv(s, &path),
        });
        if plot {
            artifacts.extend(path_dats(s, &stem, &path));
        }
    }
    Ok(Outcome {
        summary: Some(format!("limit-ode: {draws} path(s)")),
        artifacts,
        gate_passed: true,
    })
}

fn diffuse_cmd(s: &Scenario, plot: bool) -> Result<Outcome> {
    let env = environment(s)?;
    let law = s.initial_law().map_err(config)?;
    let paths = (0..s.replicates as u64)
        .into_par_iter()
        .map(|i| {
            let x0 = match &law {
                InitialLaw::Dirichlet(alpha) => SimplexPoint::project(crate::chain::sample_dirichlet(
                    alpha,
                    &mut replicate_rng(s.seed, stream_id(ARM_INITIAL, i)),
                )?)?,
                other => start_point(s, other, "diffuse")?,
            };
            let cfg = DiffusionConfig {
                env: env_for(s, &env, i),
                x0,
                horizon: s.t_end,
                dt: s.solver.dt,
            };
            simulate_diffusion(&cfg, &mut replicate_rng(s.seed, stream_id(ARM_DIFFUSION, i)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut artifacts = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        artifacts.push(Artifact {
            name: replicate_name("diffuse", i),
            content: path_csv(s, p),
        });
        if plot {
            artifacts.extend(path_dats(s, &format!("diffuse/path_{i:04}"), p));
        }
    }
    Ok(Outcome {
        summary: Some(format!("diffuse: {} paths", paths.len())),
        artifacts,
        gate_passed: true,
    })
}

/// Quenched moments for a fixed environment; for a random one the average
/// over `replicates` draws (the annealed moments, since moments are linear
/// in the law).
fn moments_cmd(s: &Scenario, plot: bool) -> Result<Outcome> {
    let env = environment(s)?;
    let y0 = initial_moments(&s.initial_law().map_err(config)?, s.n_max)?;
    let blocks: Vec<MomentBlock> = match &env {
        Environment::Fixed(p) => solve_moment_hierarchy(p, &y0, s.t_end, s.solver.h)?,
        Environment::Random(_) => {
            let runs = (0..s.replicates as u64)
                .into_par_iter()
                .map(|i| solve_moment_hierarchy(&env_for(s, &env, i), &y0, s.t_end, s.solver.h))
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / runs.len() as f64;
            let mut mean = runs[0].clone();
            for (b, block) in mean.iter_mut().enumerate() {
                for (k, v) in block.values.iter_mut().enumerate() {
                    *v = runs.iter().map(|r| &r[b].values[k]).sum::<DVector<f64>>() * scale;
                }
            }
            mean
        }
    };
    let worst = blocks
        .iter()
        .flat_map(|b| (0..b.grid.len()).map(move |k| (b.normalization(k) - 1.0).abs()))
        .fold(0.0, f64::max);
    let mut artifacts = vec![Artifact {
        name: "moments.csv".into(),
        content: moments_csv(s, &blocks),
    }];
    if plot {
        for b in &blocks {
            for (idx, alpha) in b.indices.indices().iter().enumerate() {
                artifacts.push(Artifact {
                    name: format!("moments/y_{}.dat", alpha_label(alpha, "-")),
                    content: dat(s, b.grid.iter().zip(&b.values).map(|(&t, v)| (t, v[idx]))),
                });
            }
        }
    }
    Ok(Outcome {
        summary: Some(format!(
            "moments: orders 1..={}, max normalization residual {worst:e}",
            s.n_max
        )),
        artifacts,
        gate_passed: worst <= NORMALIZATION_TOL,
    })
}

fn generator_cmd(s: &Scenario, plot: bool) -> Result<Outcome> {
    let env = env_for(s, &environment(s)?, 0);
    let f = s.test_function().map_err(config)?;
    let ns = s.populations();
    let scan = generator_gap_scan(s.model.chain_model(), &env, &f, &ns, s.t_end, s.generator.density)?;
    let gate_passed = if f.degree() <= 1 {
        scan.gaps.iter().all(|&g| g <= LINEAR_GAP_TOL)
    } else {
        scan.ratios.iter().zip(ns.windows(2)).all(|(r, w)| {
            let want = w[1] as f64 / w[0] as f64;
            (r / want - 1.0).abs() <= GAP_RATIO_TOL
        })
    };
    let rows: Vec<Vec<String>> = ns
        .iter()
        .zip(scan.gaps.iter().zip(&scan.scaled))
        .map(|(n, (g, sc))| vec![n.to_string(), g.to_string(), sc.to_string()])
        .collect();
    let mut artifacts = vec![
        Artifact {
            name: "generator_check.json".into(),
            content: report_json(s, &scan),
        },
        Artifact {
            name: "generator_check.csv".into(),
            content: table_csv(s, &["N", "gap", "gap_times_N"], &rows),
        },
    ];
    if plot {
        artifacts.push(Artifact {
            name: "generator_check.dat".into(),
            content: dat(s, ns.iter().zip(&scan.gaps).map(|(&n, &g)| (n as f64, g))),
        });
    }
    Ok(Outcome {
        summary: Some(format!("generator-check: gaps {:?}", scan.gaps)),
        artifacts,
        gate_passed,
    })
}

fn converge_cmd(s: &Scenario, plot: bool) -> Result<Outcome> {
    let env = fixed_env(&environment(s)?, "converge")?;
    let x0 = start_point(s, &s.initial_law().map_err(config)?, "converge")?;
    match s.model.chain_model() {
        crate::chain::Model::Mamwid => {
            let report = mamwid_convergence(&env, &x0, s.t_end, &s.populations(), s.replicates, s.seed)?;
            let rows: Vec<Vec<String>> = report
                .n_values
                .iter()
                .zip(report.mean_error.iter().zip(&report.std_error))
                .map(|(n, (m, sd))| vec![n.to_string(), m.to_string(), sd.to_string()])
                .collect();
            let mut artifacts = vec![
                Artifact {
                    name: "converge.json".into(),
                    content: report_json(s, &report),
                },
                Artifact {
                    name: "converge.csv".into(),
                    content: table_csv(s, &["N", "mean_sup_error", "std_sup_error"], &rows),
                },
            ];
            if plot {
                artifacts.push(Artifact {
                    name: "converge.dat".into(),
                    content: dat(
                        s,
                        report
                            .n_values
                            .iter()
                            .zip(&report.mean_error)
                            .map(|(&n, &e)| (n as f64, e)),
                    ),
                });
            }
            Ok(Outcome {
                summary: Some(format!(
                    "converge: slope {} pass {}",
                    report.fit.map_or(f64::NAN, |f| f.slope),
                    report.pass
                )),
                gate_passed: report.pass,
                artifacts,
            })
        }
        crate::chain::Model::Mamwidams => {
            let report = mamwidams_moment_test(&env, &x0, s.t_end, s.population(), s.replicates, s.n_max, s.seed)?;
            let rows: Vec<Vec<String>> = report
                .checks
                .iter()
                .map(|c| {
                    vec![
                        c.t.to_string(),
                        alpha_label(&c.alpha, ":"),
                        c.empirical.to_string(),
                        c.std_err.to_string(),
                        c.predicted.to_string(),
                        c.z.to_string(),
                    ]
                })
                .collect();
            let mut artifacts = vec![
                Artifact {
                    name: "converge.json".into(),
                    content: report_json(s, &report),
                },
                Artifact {
                    name: "converge.csv".into(),
                    content: table_csv(s, &["t", "alpha", "empirical", "std_err", "predicted", "z"], &rows),
                },
            ];
            if plot {
                artifacts.push(Artifact {
                    name: "converge.dat".into(),
                    content: dat(s, report.checks.iter().map(|c| (c.predicted, c.empirical))),
                });
            }
            Ok(Outcome {
                summary: Some(format!("converge: max |z| {} pass {}", report.max_abs_z, report.pass)),
                gate_passed: report.pass,
                artifacts,
            })
        }
    }
}

fn annealed_cmd(s: &Scenario, plot: bool) -> Result<Outcome> {
    let Environment::Random(spec) = environment(s)? else {
        return Err(Error::InvalidArgument(
            "`annealed` needs a random environment (markov_switch or fundamentals)".into(),
        ));
    };
    let x0 = start_point(s, &s.initial_law().map_err(config)?, "annealed")?;
    let report = quenched_annealed_test(
        &spec,
        s.model.chain_model(),
        &x0,
        s.t_end,
        s.population(),
        s.annealed.env_draws,
        s.annealed.chains_per_env,
        s.seed,
    )?;
    let rows: Vec<Vec<String>> = report
        .tests
        .iter()
        .map(|t| {
            vec![
                t.t.to_string(),
                (t.coordinate + 1).to_string(),
                t.ks.statistic.to_string(),
                t.ks.n_eff.to_string(),
                t.ks.p_value.to_string(),
            ]
        })
        .collect();
    let mut artifacts = vec![
        Artifact {
            name: "annealed.json".into(),
            content: report_json(s, &report),
        },
        Artifact {
            name: "annealed.csv".into(),
            content: table_csv(s, &["t", "coordinate", "ks_statistic", "n_eff", "p_value"], &rows),
        },
    ];
    if plot {
        artifacts.push(Artifact {
            name: "annealed.dat".into(),
            content: dat(
                s,
                report.tests.iter().enumerate().map(|(i, t)| (i as f64, t.ks.p_value)),
            ),
        });
    }
    Ok(Outcome {
        summary: Some(format!(
            "annealed: min p {} (level {}) pass {}",
            report.min_p_value, report.level, report.pass
        )),
        gate_passed: report.pass,
        artifacts,
    })
}

/// Runs one subcommand on a validated scenario.
pub fn execute(cmd: Command, s: &Scenario, plot: bool) -> Result<Outcome> {
    match cmd {
        Command::Simulate => simulate_cmd(s, plot),
        Command::LimitOde => limit_ode_cmd(s, plot),
        Command::Diffuse => diffuse_cmd(s, plot),
        Command::Moments => moments_cmd(s, plot),
        Command::GeneratorCheck => generator_cmd(s, plot),
        Command::Converge => converge_cmd(s, plot),
        Command::Annealed => annealed_cmd(s, plot),
    }
}
