use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use stg_core::augment::{augment, compress, AugmentedGraph};
use stg_core::centroid::derive_centroid;
use stg_core::io::{GraphBody, GraphDocument, GraphInput};
use stg_core::matrix::{to_padded_pair, MatrixDocument, PaddedMatrix};
use stg_core::mine::{common_subgraphs_capped, containment_rate};
use stg_core::record::ingest;
use stg_core::repair::{repair, RepairResult, SolverConfig};
use stg_core::stats::{mantel_spearman, DistanceMatrix};
use stg_core::study::{
    ablation_study, centroid_error_study, distance_matrix, relative_error_study, write_csv, CentroidErrorConfig,
    RelativeErrorConfig,
};
use stg_core::synth::{build_corpus_with, edit_count, Certification};
use stg_core::{seed, validate_augmented, validate_stg, LevelKind, StructuralTemporalGraph};

use crate::args::{Command, Study};
use crate::config::RunConfig;
use crate::error::{CliError, StageExt};
use crate::manifest::Workspace;

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub ws: &'a mut Workspace,
    /// Resolved before any compute for commands that repair.
    pub solver: Option<SolverConfig>,
}

/// Locate the solver for commands that need one, failing fast.
pub fn locate_solver(cfg: &RunConfig) -> Result<SolverConfig, CliError> {
    let found = SolverConfig::locate(cfg.solver.as_deref()).map_err(|e| CliError::Config(e.to_string()))?;
    if !found.path.is_file() {
        return Err(CliError::Config(format!("solver {} does not exist", found.path.display())));
    }
    Ok(found
        .with_timeout(Duration::from_secs(cfg.repair.timeout_secs))
        .with_lns(cfg.repair.lns))
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
    let name = name.strip_suffix(".json").unwrap_or(&name);
    for suffix in [".stg", ".aug"] {
        if let Some(s) = name.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    name.to_string()
}

/// Files named directly plus the `.json` files of named directories, sorted.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json") && !f.ends_with(crate::manifest::MANIFEST_NAME))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Input("no input graphs".into()));
    }
    Ok(out)
}

impl Context<'_> {
    fn load(&mut self, path: &Path) -> Result<GraphInput, CliError> {
        let text = self.ws.read_string(path)?;
        GraphInput::parse(&text).stage("ingest")
    }

    fn load_stg(&mut self, path: &Path) -> Result<StructuralTemporalGraph, CliError> {
        self.load(path)?.to_stg().stage("ingest")
    }

    fn load_augmented(&mut self, path: &Path) -> Result<AugmentedGraph, CliError> {
        self.load(path)?.to_augmented().stage("augment")
    }

    fn load_corpus(&mut self, paths: &[PathBuf]) -> Result<(Vec<String>, Vec<AugmentedGraph>), CliError> {
        let files = expand(paths)?;
        let mut labels = Vec::new();
        let mut graphs = Vec::new();
        for f in &files {
            labels.push(stem(f));
            graphs.push(self.load_augmented(f)?);
        }
        Ok((labels, graphs))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.ws.write(name, text)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        write_csv(rows, &mut buf).stage("output")?;
        self.ws.write(name, buf)
    }

    fn solver(&self) -> Result<&SolverConfig, CliError> {
        self.solver.as_ref().ok_or_else(|| CliError::Config("no solver configured".into()))
    }

    fn repaired(&mut self, approx: &PaddedMatrix) -> Result<(RepairResult, AugmentedGraph), CliError> {
        let result = repair(approx, self.solver()?).stage("repair")?;
        for p in &result.partitions {
            log::info!("repair {}: {} flips in {:.2}s", p.name, p.flips, p.seconds);
        }
        let graph = result.matrix.to_augmented().stage("repair")?;
        let stats: Vec<RepairStats> = result
            .partitions
            .iter()
            .map(|p| RepairStats {
                partition: p.name.clone(),
                free_cells: p.free_cells,
                flips: p.flips,
                optimal: p.optimal,
                timed_out: p.timed_out,
            })
            .collect();
        self.json(
            "repair.json",
            &RepairReport {
                objective: result.objective,
                partitions: stats,
            },
        )?;
        Ok((result, graph))
    }

    pub fn execute(&mut self, command: &Command) -> Result<(), CliError> {
        match command {
            Command::Ingest { input, levels } => self.ingest(input, levels),
            Command::Validate { input } => self.validate(input),
            Command::Augment { input, dot } => {
                let g = self.load_augmented(input)?;
                let title = stem(input);
                self.ws.write(&format!("{title}.aug.json"), GraphDocument::from_augmented(&title, &g).to_json())?;
                if *dot {
                    self.ws.write(&format!("{title}.dot"), g.to_dot())?;
                }
                Ok(())
            }
            Command::Compress { input } => {
                let g = self.load_augmented(input)?;
                let c = compress(&g).stage("compress")?;
                let title = stem(input);
                self.ws.write(&format!("{title}.stg.json"), GraphDocument::from_stg(&title, &c).to_json())?;
                Ok(())
            }
            Command::Distance { a, b, exhaustive } => {
                let (ga, gb) = (self.load_augmented(a)?, self.load_augmented(b)?);
                let (m1, m2) = to_padded_pair(&ga, &gb).stage("distance")?;
                let aligner = if *exhaustive { self.cfg.auto_aligner() } else { self.cfg.annealer() };
                let d = aligner.run(&m1, &m2, self.cfg.seed).stage("distance")?.energy;
                println!("{d}");
                self.csv(
                    "distance.csv",
                    &[DistanceRow {
                        a: stem(a),
                        b: stem(b),
                        distance: d,
                    }],
                )?;
                Ok(())
            }
            Command::DistanceMatrix { inputs, keep } => {
                let files = expand(inputs)?;
                let mut labels = Vec::new();
                let mut graphs = Vec::new();
                for f in &files {
                    let mut g = self.load_stg(f)?;
                    if let Some(k) = keep {
                        g = g.ablate(*k).stage("ablate")?;
                    }
                    labels.push(stem(f));
                    graphs.push(augment(&g).stage("augment")?);
                }
                let m = distance_matrix(labels, &graphs, &self.cfg.annealer(), self.cfg.seed).stage("distance")?;
                self.matrix("distances.csv", &m)
            }
            Command::Centroid { inputs, repair } => self.centroid(inputs, *repair),
            Command::Repair { input, dump_scripts } => {
                let text = self.ws.read_string(input)?;
                let doc: MatrixDocument =
                    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
                let approx = doc.to_matrix().stage("repair")?;
                if *dump_scripts {
                    let dir = self.ws.root().join("smt");
                    self.solver = self.solver.take().map(|s| s.with_dump_dir(dir));
                }
                let (_, g) = self.repaired(&approx)?;
                let title = stem(input);
                self.ws.write(&format!("{title}.repaired.json"), GraphDocument::from_augmented(&title, &g).to_json())?;
                Ok(())
            }
            Command::Synth { base, k, edits, p } => {
                let g = self.load_augmented(base)?;
                let n = edits.unwrap_or_else(|| edit_count(g.edge_count(), p.unwrap_or(0.5)));
                let corpus = build_corpus_with(&g, *k, n, self.cfg.seed).stage("synth")?;
                let title = stem(base);
                self.ws.write("base.json", GraphDocument::from_augmented(&title, &g).to_json())?;
                for (i, v) in corpus.variants.iter().enumerate() {
                    let name = format!("{title}-{i:02}");
                    self.ws.write(&format!("corpus/{name}.json"), GraphDocument::from_augmented(&name, v).to_json())?;
                }
                self.json("scripts.json", &corpus.scripts)
                    .map(|_| ())
            }
            Command::Study { study } => self.study(study),
            Command::Mantel { a, b, perms } => {
                let ma = DistanceMatrix::read_csv(&self.ws.read(a)?[..]).stage("mantel")?;
                let mb = DistanceMatrix::read_csv(&self.ws.read(b)?[..]).stage("mantel")?;
                let r = mantel_spearman(&ma, &mb, perms.unwrap_or(self.cfg.mantel.permutations), self.cfg.seed)
                    .stage("mantel")?;
                println!("rho_s = {:.4}, p = {:.4}", r.rho, r.p_value);
                self.json("mantel.json", &r).map(|_| ())
            }
            Command::Mine { corpus, size, centroid } => self.mine(corpus, size.unwrap_or(self.cfg.mine.size), centroid.as_deref()),
            Command::Run { .. } | Command::Replay { .. } => {
                Err(CliError::Config(format!("{} cannot be nested", command.name())))
            }
        }
    }

    fn ingest(&mut self, input: &Path, levels: &[String]) -> Result<(), CliError> {
        let g = match self.load(input)? {
            GraphInput::Record(r) if !levels.is_empty() => {
                let wanted = levels
                    .iter()
                    .map(|l| LevelKind::from_name(l).ok_or_else(|| CliError::Config(format!("unknown level {l:?}"))))
                    .collect::<Result<BTreeSet<_>, _>>()?;
                ingest(&r, &wanted).stage("ingest")?
            }
            other => other.to_stg().stage("ingest")?,
        };
        let title = stem(input);
        self.ws.write(&format!("{title}.stg.json"), GraphDocument::from_stg(&title, &g).to_json())?;
        Ok(())
    }

    fn validate(&mut self, input: &Path) -> Result<(), CliError> {
        let report = match self.load(input)? {
            GraphInput::Record(r) => match stg_core::ingest_all(&r) {
                Ok(g) => validate_stg(&g),
                Err(stg_core::Error::Invalid(rep)) => rep,
                Err(e) => return Err(CliError::Stage { stage: "ingest", source: e }),
            },
            GraphInput::Graph(doc) => match doc.body {
                GraphBody::Compressed { .. } => validate_stg(&doc.to_stg().stage("ingest")?),
                GraphBody::Augmented { .. } => validate_augmented(&doc.to_augmented().stage("ingest")?),
            },
        };
        self.json("validation.json", &report)?;
        if report.is_empty() {
            println!("valid");
            Ok(())
        } else {
            println!("{report}");
            Err(CliError::Input(format!("{} violates {} rule(s)", input.display(), report.len())))
        }
    }

    fn matrix(&mut self, name: &str, m: &DistanceMatrix) -> Result<(), CliError> {
        let mut buf = Vec::new();
        m.write_csv(&mut buf).stage("output")?;
        self.ws.write(name, buf)?;
        Ok(())
    }

    fn centroid(&mut self, inputs: &[PathBuf], do_repair: bool) -> Result<(), CliError> {
        let (labels, corpus) = self.load_corpus(inputs)?;
        let cfg = self.cfg.centroid_config(seed::derive(self.cfg.seed, &[0]));
        let outcome = derive_centroid(&corpus, &cfg).stage("centroid")?;
        self.ws.write("centroid.matrix.json", MatrixDocument::from_matrix(&outcome.centroid).to_json())?;
        let trace: Vec<TraceRow> = outcome
            .best_trace
            .iter()
            .zip(&outcome.loss_trace)
            .enumerate()
            .map(|(step, (&best, &loss))| TraceRow { step, best, loss })
            .collect();
        self.csv("trace.csv", &trace)?;
        let mut summary = CentroidSummary {
            members: labels.clone(),
            naive: labels[outcome.naive.index].clone(),
            naive_loss: outcome.naive.rest_losses[outcome.naive.index],
            initial_loss: outcome.initial_loss,
            loss: outcome.loss,
            accepted: outcome.accepted,
            steps: outcome.best_trace.len(),
            stopped_early: outcome.stopped_early,
            repair_objective: None,
        };
        if do_repair {
            let (result, g) = self.repaired(&outcome.centroid)?;
            summary.repair_objective = Some(result.objective);
            self.ws.write("centroid.json", GraphDocument::from_augmented("centroid", &g).to_json())?;
            let c = compress(&g).stage("compress")?;
            self.ws.write("centroid.stg.json", GraphDocument::from_stg("centroid", &c).to_json())?;
        }
        self.json("centroid.summary.json", &summary).map(|_| ())
    }

    fn study(&mut self, study: &Study) -> Result<(), CliError> {
        match study {
            Study::DistError {
                base,
                p,
                replicates,
                no_certify,
            } => {
                let mut bases = Vec::new();
                for b in base {
                    bases.push((stem(b), self.load_augmented(b)?));
                }
                let mut cfg = RelativeErrorConfig {
                    replicates: *replicates,
                    schedule: self.cfg.schedule(self.cfg.seed),
                    certify: (!*no_certify).then(Certification::default),
                    seed: self.cfg.seed,
                    ..Default::default()
                };
                if !p.is_empty() {
                    cfg.p_grid = p.clone();
                }
                let rows = relative_error_study(&bases, &cfg).stage("study")?;
                self.csv("dist-error.csv", &rows).map(|_| ())
            }
            Study::CentroidError { base, ks, no_repair } => {
                let g = self.load_augmented(base)?;
                let mut cfg = CentroidErrorConfig {
                    centroid: self.cfg.centroid_config(self.cfg.seed),
                    eval: self.cfg.auto_aligner(),
                    solver: if *no_repair { None } else { Some(self.solver()?.clone()) },
                    seed: self.cfg.seed,
                    ..Default::default()
                };
                if !ks.is_empty() {
                    cfg.ks = ks.clone();
                }
                let out = centroid_error_study(&g, &cfg).stage("study")?;
                self.csv("centroid-error.csv", &out.rows)?;
                let trace: Vec<KTraceRow> = cfg
                    .ks
                    .iter()
                    .zip(&out.traces)
                    .flat_map(|(&k, t)| t.iter().enumerate().map(move |(step, &best)| KTraceRow { k, step, best }))
                    .collect();
                self.csv("centroid-trace.csv", &trace).map(|_| ())
            }
            Study::Ablation { inputs } => {
                let files = expand(inputs)?;
                let mut graphs = Vec::new();
                for f in &files {
                    graphs.push((stem(f), self.load_stg(f)?));
                }
                let out = ablation_study(&graphs, &self.cfg.annealer(), self.cfg.seed).stage("study")?;
                for a in &out {
                    self.matrix(&format!("ablation-keep{}.csv", a.keep), &a.matrix)?;
                }
                Ok(())
            }
        }
    }

    fn mine(&mut self, corpus: &[PathBuf], size: usize, centroid: Option<&Path>) -> Result<(), CliError> {
        let (labels, graphs) = self.load_corpus(corpus)?;
        let common = common_subgraphs_capped(&graphs, size, self.cfg.mine.cap).stage("mine")?;
        let containment = match centroid {
            Some(c) => {
                let g = self.load_augmented(c)?;
                Some(containment_rate(&common, &g).stage("mine")?)
            }
            None => None,
        };
        if let Some(c) = &containment {
            println!("{} common {size}-node subgraphs, {:.2}% in centroid", common.len(), c.percent);
        } else {
            println!("{} common {size}-node subgraphs", common.len());
        }
        let report = MineReport {
            size,
            members: labels,
            common: common.len(),
            containment,
            samples: common.iter().take(10).map(|s| s.to_dot()).collect(),
        };
        self.json("mine.json", &report).map(|_| ())
    }
}

#[derive(Serialize)]
struct DistanceRow {
    a: String,
    b: String,
    distance: f64,
}

#[derive(Serialize)]
struct TraceRow {
    step: usize,
    best: f64,
    loss: f64,
}

#[derive(Serialize)]
struct KTraceRow {
    k: usize,
    step: usize,
    best: f64,
}

#[derive(Serialize)]
struct CentroidSummary {
    members: Vec<String>,
    naive: String,
    naive_loss: f64,
    initial_loss: f64,
    loss: f64,
    accepted: usize,
    steps: usize,
    stopped_early: bool,
    repair_objective: Option<usize>,
}

/// Repair statistics without timings, so that outputs stay reproducible.
#[derive(Serialize)]
struct RepairStats {
    partition: String,
    free_cells: usize,
    flips: usize,
    optimal: bool,
    timed_out: bool,
}

#[derive(Serialize)]
struct RepairReport {
    objective: usize,
    partitions: Vec<RepairStats>,
}

#[derive(Serialize)]
struct MineReport {
    size: usize,
    members: Vec<String>,
    common: usize,
    containment: Option<stg_core::mine::Containment>,
    samples: Vec<String>,
}
