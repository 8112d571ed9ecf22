use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context as _;
use polyvox_core::mushra::{analyze as analyze_scores, load_scores, TestMode};
use polyvox_evalserve::{serve as serve_http, EvalService, ServiceOptions};

use super::{usage, Context};
use crate::error::CliResult;
use crate::runlog::Stage;
use crate::{AnalyzeArgs, ServeArgs};

const SERVE: &str = "mushra-serve";

pub fn serve(ctx: &Context, a: ServeArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let db: PathBuf = cfg.require(a.db, SERVE, "db")?;
    let addr: String = cfg.pick(a.addr, SERVE, "addr", "127.0.0.1:8080".to_string())?;
    let defaults = ServiceOptions::default();
    let timeout = cfg.pick(
        a.reservation_timeout,
        SERVE,
        "reservation_timeout",
        defaults.reservation_timeout.as_secs(),
    )?;
    let compact_every = cfg.pick(a.compact_every, SERVE, "compact_every", defaults.compact_every)?;
    if timeout == 0 || compact_every == 0 {
        return Err(usage("--reservation-timeout and --compact-every must be positive"));
    }
    let options = ServiceOptions {
        reservation_timeout: Duration::from_secs(timeout),
        compact_every,
    };
    std::fs::create_dir_all(&db).with_context(|| format!("create {}", db.display()))?;
    let service = Arc::new(EvalService::open(&db, options).map_err(anyhow::Error::from)?);
    Stage::new(SERVE, db.join("mushra-serve.json"), &[])?
        .arg("addr", &addr)
        .arg("reservation_timeout", timeout)
        .arg("compact_every", compact_every)
        .finish(&[])?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("start async runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("bind {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        serve_http(listener, service).await.context("server")?;
        anyhow::Ok(())
    })?;
    Ok(())
}

const ANALYZE: &str = "mushra-analyze";

pub fn parse_mode(s: &str) -> CliResult<TestMode> {
    match s {
        "naturalness" => Ok(TestMode::Naturalness),
        "similarity" => Ok(TestMode::Similarity),
        other => Err(usage(format!(
            "unknown mode {other:?}; expected naturalness or similarity"
        ))),
    }
}

pub fn analyze(ctx: &Context, a: AnalyzeArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let scores: PathBuf = cfg.require(a.scores, ANALYZE, "scores")?;
    let alpha = cfg.pick(a.alpha, ANALYZE, "alpha", 0.05f64)?;
    let mode_name: String = cfg.pick(a.mode, ANALYZE, "mode", "naturalness".to_string())?;
    let mode = parse_mode(&mode_name)?;
    let default_label = scores
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let label: String = cfg.pick(a.label, ANALYZE, "label", default_label)?;
    let systems: Vec<String> = match a.systems {
        Some(v) => v,
        None => cfg
            .raw(ANALYZE, "systems")
            .map(|s| {
                s.split(',')
                    .map(|x| x.trim().to_string())
                    .filter(|x| !x.is_empty())
                    .collect()
            })
            .unwrap_or_default(),
    };
    let out: Option<PathBuf> = cfg.opt(a.out, ANALYZE, "out")?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage(format!("--alpha {alpha} must lie in (0, 1)")));
    }

    let stage = match &out {
        Some(dir) => {
            let stage = Stage::new(ANALYZE, dir.join("mushra-analyze.json"), std::slice::from_ref(&scores))?
                .arg("alpha", alpha)
                .arg("mode", &mode_name)
                .arg("label", &label)
                .arg("systems", systems.join(","));
            if ctx.skip(&stage)?.is_some() {
                print!("{}", std::fs::read_to_string(dir.join("report.txt"))?);
                return Ok(());
            }
            Some(stage)
        }
        None => None,
    };

    let records = load_scores(&scores)?;
    let report = analyze_scores(&records, &systems, &label, mode, alpha)?;
    let text = report.to_text();
    if let (Some(dir), Some(stage)) = (out, stage) {
        std::fs::create_dir_all(&dir)?;
        let text_path = dir.join("report.txt");
        let json_path = dir.join("report.json");
        let box_path = dir.join("boxplot.tsv");
        std::fs::write(&text_path, &text)?;
        std::fs::write(
            &json_path,
            serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n",
        )?;
        std::fs::write(&box_path, report.boxplot_tsv())?;
        stage.finish(&[text_path, json_path, box_path])?;
    }
    print!("{text}");
    Ok(())
}
