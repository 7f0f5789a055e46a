use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use spro_core::checkpoint::Checkpoint;
use spro_core::datasets::{self, gap_intervals};
use spro_core::ensemble::{self, EnsembleConfig, Member, Prediction};
use spro_core::geometry::{log_complex_volume, ParamVector, VertexId};
use spro_core::metrics::{self, CalibrationReport};
use spro_core::netcore::{self, Batch, OutputKind, Targets};
use spro_core::opt::{self, rng_stream};
use spro_core::spro::{self, ComplexSpec, SproRun};
use spro_core::surface;

use crate::config::{decision_grid, DataConfig, ExperimentConfig};
use crate::out::OutDir;
use crate::Invalid;

/// RNG stream for the sample statistics reported after growing a complex.
const SUMMARY_STREAM: u64 = 20_000;
/// Points per axis of the diversity grid.
const DIVERSITY_GRID: usize = 41;

fn csv_bytes(batch: &Batch) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    datasets::write_csv(batch, &mut buf)?;
    Ok(buf)
}

fn seeds(config: &ExperimentConfig) -> BTreeMap<String, u64> {
    BTreeMap::from([("seed".to_string(), config.seed)])
}

fn load_checkpoint(path: &Path, config: &ExperimentConfig) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    ck.require_spec(&config.model)
        .map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    Ok(ck)
}

fn load_mode(path: &Path, config: &ExperimentConfig) -> Result<ParamVector> {
    let ck = load_checkpoint(path, config)?;
    ck.first_mode()
        .ok_or_else(|| Invalid(format!("{} holds no mode vertex", path.display())).into())
}

fn classes(batch: &Batch) -> Option<&[usize]> {
    match &batch.targets {
        Targets::Classes(c) => Some(c),
        Targets::Values(_) => None,
    }
}

pub fn gen_data(config: &ExperimentConfig, out: &mut OutDir) -> Result<()> {
    let data = config.load_data()?;
    match &config.data {
        DataConfig::Spirals(_) => {
            out.write("train.csv", &csv_bytes(&data.train)?)?;
            out.write(
                "test.csv",
                &csv_bytes(data.test.as_ref().expect("spirals have a test split"))?,
            )?;
        }
        DataConfig::Regression(_) => {
            out.write("train.csv", &csv_bytes(&data.train)?)?;
            out.write(
                "grid.csv",
                &csv_bytes(data.grid.as_ref().expect("regression has a grid"))?,
            )?;
        }
        DataConfig::Csv(_) => bail!(Invalid("csv datasets are loaded, not generated".into())),
    }
    out.note(format!("generated {} training rows", data.train.len()));
    Ok(())
}

#[derive(Serialize)]
struct SplitScore {
    split: String,
    loss: f64,
    accuracy: Option<f64>,
}

fn score(
    config: &ExperimentConfig,
    params: &[f64],
    name: &str,
    batch: &Batch,
) -> Result<SplitScore> {
    Ok(SplitScore {
        split: name.into(),
        loss: netcore::loss(&config.model, params, batch)?,
        accuracy: match config.model.output_kind {
            OutputKind::Logits => Some(netcore::accuracy(&config.model, params, batch)?),
            OutputKind::Scalar => None,
        },
    })
}

pub fn train_base(config: &ExperimentConfig, out: &mut OutDir) -> Result<()> {
    let data = config.load_data()?;
    let (params, history) = opt::train_base(&config.model, &data.train, &config.train)?;
    let mut scores = vec![score(config, &params, "train", &data.train)?];
    if let Some(test) = &data.test {
        scores.push(score(config, &params, "test", test)?);
    }
    for s in &scores {
        match s.accuracy {
            Some(a) => out.note(format!(
                "{}: loss {:.4}, accuracy {:.4}",
                s.split, s.loss, a
            )),
            None => out.note(format!("{}: loss {:.4}", s.split, s.loss)),
        }
    }
    let ck = Checkpoint::mode(
        &config.model,
        "w0",
        &params,
        serde_json::to_value(&history)?,
        seeds(config),
        config.to_json_value(),
    );
    out.write("mode.json", ck.to_json()?.as_bytes())?;
    out.write(
        "history.jsonl",
        opt::history_json_lines(&history).as_bytes(),
    )?;
    out.write_json("summary.json", &scores)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SproMode {
    /// Grow a k-simplex at every given mode.
    Espro,
    /// Train the connectors of a layout file joining the given modes.
    Connect,
}

fn read_layout(path: &Path) -> Result<ComplexSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let layout: ComplexSpec = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?
    };
    layout.validate().map_err(|e| Invalid(e.to_string()))?;
    Ok(layout)
}

fn write_run(
    config: &ExperimentConfig,
    out: &mut OutDir,
    run: &SproRun,
    data: &Batch,
) -> Result<()> {
    let log_volume = log_complex_volume(&run.complex)?;
    let mut rng = rng_stream(config.seed, SUMMARY_STREAM);
    let stats = spro::sample_stats(
        &run.complex,
        &config.model,
        data,
        config.ensemble.j_samples_per_simplex,
        &mut rng,
    )?;
    out.note(format!(
        "{} simplexes, log volume {log_volume:.4}, sampled train loss max {:.4} mean {:.4}",
        run.complex.simplexes.len(),
        stats.max_loss,
        stats.mean_loss
    ));
    let ck = Checkpoint::complex(
        &config.model,
        &run.complex,
        serde_json::to_value(&run.history)?,
        seeds(config),
        config.to_json_value(),
    );
    out.write("complex.json", ck.to_json()?.as_bytes())?;
    let mut lines = String::new();
    for h in &run.history {
        lines.push_str(&serde_json::to_string(h)?);
        lines.push('\n');
    }
    out.write("history.jsonl", lines.as_bytes())?;
    let summary = json!({
        "log_volume": log_volume,
        "simplex_log_volumes": spro::simplex_log_volumes(&run.complex)?,
        "lambdas": run.lambdas.iter().map(|(id, l)| json!({"vertex": id.0, "lambda": l})).collect::<Vec<_>>(),
        "train_samples": stats,
    });
    out.write_json("summary.json", &summary)
}

pub fn spro(
    config: &ExperimentConfig,
    out: &mut OutDir,
    mode: SproMode,
    k: Option<usize>,
    spec: Option<&Path>,
    modes: &[PathBuf],
) -> Result<()> {
    let params = modes
        .iter()
        .map(|p| load_mode(p, config))
        .collect::<Result<Vec<_>>>()?;
    let data = config.load_data()?;
    let run = match mode {
        SproMode::Espro => {
            let k = k.ok_or_else(|| Invalid("--mode espro needs --k".into()))?;
            if params.len() == 1 {
                spro::build_espro_simplex(&config.model, &params[0], k, &data.train, &config.spro)?
            } else {
                spro::build_espro_complex(&config.model, &params, k, &data.train, &config.spro)?
            }
        }
        SproMode::Connect => {
            let path = spec.ok_or_else(|| Invalid("--mode connect needs --spec".into()))?;
            let layout = read_layout(path)?;
            if layout.modes.len() != params.len() {
                bail!(Invalid(format!(
                    "layout declares {} modes but {} checkpoints were given",
                    layout.modes.len(),
                    params.len()
                )));
            }
            let named: Vec<(VertexId, ParamVector)> =
                layout.modes.iter().cloned().zip(params).collect();
            spro::build_connecting_complex(
                &config.model,
                &named,
                &layout,
                &data.train,
                &config.spro,
            )?
        }
    };
    write_run(config, out, &run, &data.train)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn probe_dim(
    config: &ExperimentConfig,
    out: &mut OutDir,
    modes: &[PathBuf],
    max_k: usize,
    samples: usize,
) -> Result<()> {
    let [a, b] = modes else {
        bail!(Invalid("probe-dim needs exactly two --modes".into()));
    };
    if max_k == 0 || samples == 0 {
        bail!(Invalid("--max-k and --samples must be positive".into()));
    }
    let (w0, w1) = (load_mode(a, config)?, load_mode(b, config)?);
    let data = config.load_data()?;
    let report = spro::dimensionality_probe(
        &config.model,
        &w0,
        &w1,
        max_k,
        &data.train,
        &config.spro,
        samples,
    )?;
    let mut csv = String::from("k,log_volume,max_loss,mean_loss,min_accuracy,mean_accuracy\n");
    for s in &report.steps {
        let st = s.stats.as_ref();
        csv.push_str(&format!(
            "{},{:?},{},{},{},{}\n",
            s.k,
            s.log_volume,
            opt_cell(st.map(|x| x.max_loss)),
            opt_cell(st.map(|x| x.mean_loss)),
            opt_cell(st.and_then(|x| x.min_accuracy)),
            opt_cell(st.and_then(|x| x.mean_accuracy)),
        ));
        out.note(format!("k {:2}  log volume {:.4}", s.k, s.log_volume));
    }
    match report.collapse_k {
        Some(k) => out.note(format!(
            "volume collapsed at k = {k}; dimension ≥ {}",
            report.dimension_lower_bound
        )),
        None => out.note(format!("no collapse up to k = {max_k}")),
    }
    out.write("probe.csv", csv.as_bytes())?;
    out.write_json(
        "probe.json",
        &json!({
            "max_k": max_k,
            "collapse_k": report.collapse_k,
            "dimension_lower_bound": report.dimension_lower_bound,
            "steps": report.steps,
        }),
    )?;
    let ck = Checkpoint::complex(
        &config.model,
        &report.complex,
        Value::Null,
        seeds(config),
        config.to_json_value(),
    );
    out.write("complex.json", ck.to_json()?.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct ClassifierEval {
    split: String,
    members: usize,
    report: CalibrationReport,
    /// Weighted mean of the members' own NLLs on the split.
    mean_member_nll: f64,
    temperature: Option<f64>,
    scaled: Option<CalibrationReport>,
    /// Mean pairwise disagreement of members on the `[-2, 2]²` grid (2-D inputs).
    grid_diversity: Option<f64>,
}

#[derive(Serialize)]
struct RegressionEval {
    split: String,
    members: usize,
    rmse_vs_target: f64,
    mean_std_data: Option<f64>,
    mean_std_gaps: Option<f64>,
    std_ratio: Option<f64>,
}

fn probabilities(p: Prediction) -> netcore::Matrix {
    match p {
        Prediction::Probabilities(m) => m,
        Prediction::Regression(_) => unreachable!("classifier prediction"),
    }
}

pub fn eval(
    config: &ExperimentConfig,
    out: &mut OutDir,
    complex: &Path,
    j_sweep: &[usize],
    fit_temperature: bool,
) -> Result<()> {
    let ck = load_checkpoint(complex, config)?;
    let complex = ck.to_complex()?;
    let data = config.load_data()?;
    let spec = &config.model;
    let (split, batch) = data.eval_split();
    let members = ensemble::draw_members(&complex, spec, &config.ensemble)?;
    let prediction = ensemble::predict_members(spec, &members, &batch.inputs)?;
    let mut buf = Vec::new();
    ensemble::write_predictions_csv(&mut buf, &batch.inputs, &prediction)?;
    out.write("predictions.csv", &buf)?;

    match prediction {
        Prediction::Probabilities(probs) => {
            let targets = classes(batch).expect("classifier targets");
            let report = metrics::evaluate(&probs, targets)?;
            let mean_member_nll = mean_member_nll(spec, &members, batch)?;
            out.note(format!(
                "{split}: accuracy {:.4}, nll {:.4}, ece {:.4}; mean member nll {:.4}",
                report.accuracy, report.nll, report.ece, mean_member_nll
            ));
            let (temperature, scaled) = if fit_temperature {
                let (vname, vbatch) = match &data.validation {
                    Some(v) => ("validation", v),
                    None => ("train", &data.train),
                };
                let vprobs =
                    probabilities(ensemble::predict_members(spec, &members, &vbatch.inputs)?);
                let t = metrics::fit_temperature_from_probs(
                    &vprobs,
                    classes(vbatch).expect("classes"),
                )?;
                let scaled = metrics::evaluate(&t.apply(&metrics::log_probs(&probs)), targets)?;
                out.note(format!(
                    "temperature {:.4} fitted on {vname}; scaled nll {:.4}, ece {:.4}",
                    t.temperature, scaled.nll, scaled.ece
                ));
                (Some(t.temperature), Some(scaled))
            } else {
                (None, None)
            };
            let grid_diversity = if spec.input_width() == 2 {
                let grid = decision_grid(DIVERSITY_GRID);
                let labels = members
                    .iter()
                    .map(|m| {
                        netcore::forward(spec, &m.params, &grid).map(|o| netcore::argmax_rows(&o))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let d = ensemble::mean_pairwise_disagreement(&labels);
                out.note(format!("member disagreement on the [-2, 2]² grid {d:.4}"));
                Some(d)
            } else {
                None
            };
            out.write_json(
                "report.json",
                &ClassifierEval {
                    split: split.into(),
                    members: members.len(),
                    report,
                    mean_member_nll,
                    temperature,
                    scaled,
                    grid_diversity,
                },
            )?;
            if !j_sweep.is_empty() {
                let mut csv = String::from("j,error,nll\n");
                for &j in j_sweep {
                    let cfg = EnsembleConfig {
                        j_samples_per_simplex: j,
                        ..config.ensemble
                    };
                    let p = probabilities(ensemble::predict(&complex, spec, &batch.inputs, &cfg)?);
                    let r = metrics::evaluate(&p, targets)?;
                    csv.push_str(&format!("{j},{:?},{:?}\n", 1.0 - r.accuracy, r.nll));
                    out.note(format!(
                        "J = {j}: error {:.4}, nll {:.4}",
                        1.0 - r.accuracy,
                        r.nll
                    ));
                }
                out.write("jsweep.csv", csv.as_bytes())?;
            }
        }
        Prediction::Regression(pred) => {
            let Targets::Values(y) = &batch.targets else {
                bail!(Invalid("regression model needs real targets".into()));
            };
            let err = rmse(&pred.mean, y);
            let x = &batch.inputs.data;
            let (data_std, gap_std) = if data.intervals.is_empty() {
                (None, None)
            } else {
                (
                    ensemble::mean_std_over(x, &pred.variance, &data.intervals),
                    ensemble::mean_std_over(x, &pred.variance, &gap_intervals(&data.intervals)),
                )
            };
            let ratio = data_std.zip(gap_std).map(|(d, g)| g / d);
            out.note(format!(
                "{split}: rmse {err:.4}, gap/data std ratio {}",
                opt_cell(ratio)
            ));
            out.write_json(
                "report.json",
                &RegressionEval {
                    split: split.into(),
                    members: members.len(),
                    rmse_vs_target: err,
                    mean_std_data: data_std,
                    mean_std_gaps: gap_std,
                    std_ratio: ratio,
                },
            )?;
            if !j_sweep.is_empty() {
                let mut csv = String::from("j,rmse\n");
                for &j in j_sweep {
                    let cfg = EnsembleConfig {
                        j_samples_per_simplex: j,
                        ..config.ensemble
                    };
                    let Prediction::Regression(p) =
                        ensemble::predict(&complex, spec, &batch.inputs, &cfg)?
                    else {
                        unreachable!("regression prediction")
                    };
                    csv.push_str(&format!("{j},{:?}\n", rmse(&p.mean, y)));
                }
                out.write("jsweep.csv", csv.as_bytes())?;
            }
        }
    }
    Ok(())
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn mean_member_nll(spec: &netcore::ModelSpec, members: &[Member], batch: &Batch) -> Result<f64> {
    let targets = classes(batch).expect("classifier targets");
    let mut total = 0.0;
    for (m, p) in members.iter().zip(ensemble::member_probabilities(
        spec,
        members,
        &batch.inputs,
    )?) {
        total += m.weight * metrics::nll(&p, targets)?;
    }
    Ok(total)
}

/// A `checkpoint:vertex` reference; the vertex defaults to the first mode.
fn resolve_vertex(reference: &str, config: &ExperimentConfig) -> Result<(String, ParamVector)> {
    let (path, id) = match reference.rsplit_once(':') {
        Some((p, id)) if !id.contains(['/', '\\']) && !id.is_empty() => (p, Some(id)),
        _ => (reference, None),
    };
    let ck = load_checkpoint(Path::new(path), config)?;
    let found = match id {
        Some(id) => ck.vertex(id).map(|p| (id.to_string(), p)),
        None => ck
            .vertices
            .iter()
            .find(|v| v.role == spro_core::geometry::Role::Mode)
            .map(|v| (v.id.clone(), ParamVector(v.values.clone()))),
    };
    found.ok_or_else(|| Invalid(format!("no vertex {reference}")).into())
}

pub fn surface(
    config: &ExperimentConfig,
    out: &mut OutDir,
    vertices: &[String],
    complex: Option<&Path>,
    face: Option<&str>,
) -> Result<()> {
    let mut extra = Vec::new();
    let points: Vec<(String, ParamVector)> = match (complex, face) {
        (Some(path), Some(face)) => {
            let ck = load_checkpoint(path, config)?;
            let ids: Vec<&str> = face.split(',').map(str::trim).collect();
            let points = ids
                .iter()
                .map(|id| {
                    ck.vertex(id).map(|p| (id.to_string(), p)).ok_or_else(|| {
                        Invalid(format!("no vertex {id} in {}", path.display())).into()
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            extra = ck
                .vertices
                .iter()
                .filter(|v| !ids.contains(&v.id.as_str()))
                .map(|v| (v.id.clone(), v.values.clone()))
                .collect();
            points
        }
        (None, None) => vertices
            .iter()
            .map(|r| resolve_vertex(r, config))
            .collect::<Result<_>>()?,
        _ => bail!(Invalid("--complex and --face go together".into())),
    };
    if points.len() != 3 {
        bail!(Invalid(format!(
            "a plane needs three points, got {}",
            points.len()
        )));
    }
    let data = config.load_data()?;
    let basis = surface::plane_basis(
        &points[0].1,
        &points[1].1,
        &points[2].1,
        config.surface.margin,
    )
    .map_err(|e| Invalid(e.to_string()))?;
    let mut grid = surface::grid_losses(
        &basis,
        config.surface.resolution,
        &config.model,
        &data.train,
    )?;
    for (label, p) in &points {
        grid.add_marker(label.clone(), p);
    }
    for (label, p) in &extra {
        grid.add_marker(label.clone(), p);
    }
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)?;
    out.write("surface.csv", &buf)?;
    out.write_json("surface.json", &grid.sidecar("surface.csv"))?;
    let sidecar = grid.sidecar("surface.csv");
    out.note(format!(
        "{0}×{0} grid over ±{1:.4}, loss {2:.4} to {3:.4}",
        grid.resolution, basis.range, sidecar.loss_min, sidecar.loss_max
    ));
    Ok(())
}
