use std::fs;
use std::time::Instant;

use anyhow::anyhow;
use spa_core::kernels::{
    decompose_dpb, espa_matrix_analytic, numeric_attention_matrix, FamilyMember,
};
use spa_core::linalg::Matrix;
use spa_core::propagation::{run_stack, CollapseMetrics};
use spa_core::schedules::{espa_schedule, uspa_schedule};
use spa_core::validation::{run_suite, Suite};

use crate::config::RunConfig;
use crate::output::{fmt_f64, Manifest, OutputDir};
use crate::{
    AttnMatrixArgs, Cli, CliError, Command, KernelEvolveArgs, ScheduleArgs, SpaMethod, ValidateArgs,
};

type CmdResult = Result<(), CliError>;

pub fn dispatch(cli: &Cli, manifest: &mut Manifest) -> CmdResult {
    match &cli.command {
        Command::AttnMatrix(args) => attn_matrix(cli, args, manifest),
        Command::KernelEvolve(args) => kernel_evolve(cli, args, manifest),
        Command::Schedule(args) => schedule(cli, args, manifest),
        Command::Validate(args) => validate(cli, args, manifest),
    }
}

fn echo<T: serde::Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

fn output_dir(cli: &Cli) -> Result<OutputDir, CliError> {
    OutputDir::create(&cli.out, cli.format).map_err(CliError::config)
}

fn attn_matrix(cli: &Cli, args: &AttnMatrixArgs, manifest: &mut Manifest) -> CmdResult {
    manifest.config = echo(args);
    if args.t == 0 {
        return Err(CliError::config(anyhow!("--T must be at least 1")));
    }
    if !(args.neg_bias.is_finite() && args.neg_bias > 0.0) {
        return Err(CliError::config(anyhow!(
            "--neg-bias must be finite and positive"
        )));
    }
    let start = Instant::now();
    let a = match args.method {
        SpaMethod::Espa => {
            let gamma_out = args.gamma_out.ok_or_else(|| {
                CliError::config(anyhow!("--gamma-out is required for --method espa"))
            })?;
            espa_matrix_analytic(args.t, args.gamma_in, gamma_out)?
        }
        SpaMethod::Uspa => {
            let rho_out = args.rho_out.ok_or_else(|| {
                CliError::config(anyhow!("--rho-out is required for --method uspa"))
            })?;
            numeric_attention_matrix(
                args.t,
                FamilyMember::Uniform(args.rho_in),
                FamilyMember::Uniform(rho_out),
            )?
        }
    };
    let op = decompose_dpb(&a, args.neg_bias)?;
    manifest
        .timings
        .insert("compute_seconds".into(), start.elapsed().as_secs_f64());

    let out = output_dir(cli)?;
    let d = Matrix::from_vec(args.t, 1, op.rescale().to_vec()).map_err(CliError::numeric)?;
    for (stem, m) in [
        ("A", op.matrix()),
        ("D", &d),
        ("P", op.probabilities()),
        ("B", op.bias()),
    ] {
        manifest.record(&out.write_matrix(stem, m).map_err(CliError::config)?);
    }
    Ok(())
}

fn metric_value(m: &CollapseMetrics, column: &str) -> f64 {
    match column {
        "mean_offdiag_cosine" => m.mean_offdiag_cosine,
        "min_offdiag_cosine" => m.min_offdiag_cosine,
        "max_diag" => m.max_diag,
        "min_diag" => m.min_diag,
        "collapse_distance" => m.collapse_distance,
        other => unreachable!("unknown metric column {other}"),
    }
}

fn kernel_evolve(cli: &Cli, args: &KernelEvolveArgs, manifest: &mut Manifest) -> CmdResult {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::config(anyhow!("cannot read {}: {e}", args.config.display())))?;
    let mut config = RunConfig::parse(&text).map_err(CliError::config)?;
    if let Some(seed) = cli.seed {
        config.stack.seed = seed;
    }
    manifest.seed = config.stack.seed;
    manifest.config = echo(&config);

    let start = Instant::now();
    let trace = run_stack(&config.stack)?;
    manifest
        .timings
        .insert("compute_seconds".into(), start.elapsed().as_secs_f64());

    let out = output_dir(cli)?;
    for l in config.blocks() {
        if config.output.raw {
            let path = out.write_matrix(&format!("sigma_block{l:04}"), trace.kernels[l].matrix());
            manifest.record(&path.map_err(CliError::config)?);
        }
        if config.output.normalized {
            let path =
                out.write_matrix(&format!("cosine_block{l:04}"), trace.normalized[l].matrix());
            manifest.record(&path.map_err(CliError::config)?);
        }
    }
    let columns = config.metric_columns();
    let mut header = vec!["block"];
    header.extend(&columns);
    let rows: Vec<Vec<String>> = trace
        .metrics
        .iter()
        .enumerate()
        .map(|(l, m)| {
            std::iter::once(l.to_string())
                .chain(columns.iter().map(|c| fmt_f64(metric_value(m, c))))
                .collect()
        })
        .collect();
    manifest.record(
        &out.write_table("metrics", &header, &rows)
            .map_err(CliError::config)?,
    );
    Ok(())
}

fn schedule(cli: &Cli, args: &ScheduleArgs, manifest: &mut Manifest) -> CmdResult {
    manifest.config = echo(args);
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = if args.espa {
        let gamma = args
            .gamma_final
            .ok_or_else(|| CliError::config(anyhow!("--gamma-L is required with --espa")))?;
        let s = espa_schedule(args.depth, gamma)?;
        let rows = (0..=args.depth)
            .map(|l| {
                let ratio = if l == 0 {
                    String::new()
                } else {
                    fmt_f64(s.diagonal_ratio(l))
                };
                vec![
                    l.to_string(),
                    s.gamma(l).to_string(),
                    fmt_f64(s.a_values()[l]),
                    ratio,
                ]
            })
            .collect();
        (vec!["l", "gamma", "a", "ratio"], rows)
    } else {
        let rho = args
            .rho_final
            .ok_or_else(|| CliError::config(anyhow!("--rho-L is required with --uspa")))?;
        let s = uspa_schedule(args.depth, rho, args.r)?;
        let rows = s
            .rhos()
            .iter()
            .enumerate()
            .map(|(l, &r)| vec![l.to_string(), fmt_f64(r)])
            .collect();
        (vec!["l", "rho"], rows)
    };
    let out = output_dir(cli)?;
    let path = out
        .write_table("schedule", &header, &rows)
        .map_err(CliError::config)?;
    println!("wrote {}", path.display());
    manifest.record(&path);
    Ok(())
}

fn validate(cli: &Cli, args: &ValidateArgs, manifest: &mut Manifest) -> CmdResult {
    manifest.config = echo(args);
    let suite: Suite = args.suite.parse()?;
    let start = Instant::now();
    let report = run_suite(suite)?;
    manifest
        .timings
        .insert("compute_seconds".into(), start.elapsed().as_secs_f64());
    print!("{report}");

    let out = output_dir(cli)?;
    let rows: Vec<Vec<String>> = report
        .checks
        .iter()
        .map(|c| {
            vec![
                c.suite.clone(),
                c.name.clone(),
                fmt_f64(c.value),
                c.relation.to_string(),
                fmt_f64(c.bound),
                c.passed.to_string(),
            ]
        })
        .collect();
    let header = ["suite", "name", "value", "relation", "bound", "passed"];
    manifest.record(
        &out.write_table("validation", &header, &rows)
            .map_err(CliError::config)?,
    );

    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", report.checks.len());
        Ok(())
    } else {
        Err(CliError::validation(anyhow!(
            "failed invariants: {}",
            failed.join("; ")
        )))
    }
}
