//! Stage runners and the output directory layout.
//!
//! ```text
//! out/
//!   records/raw/subject_NN.obs        observation matrices
//!   records/extracted/subject_NN.rec  fused respiratory signals
//!   records/prepared/subject_NN.rec   aligned, normalized signals
//!   records/prepared/prep.json        alignment per subject
//!   records/dataset/seg_NNNNN.rec     augmented segments
//!   features/subject_NN.feat          fused feature series
//!   features/dataset.csv              one feature vector per segment
//!   model.bin                         trained one-vs-one model
//!   report.json                       evaluation report
//!   tables/                           report tables
//!   .cache/<stage>.json               config a stage last completed with
//! ```
//!
//! Every stage reads its inputs from disk, so cached and recomputed runs
//! see identical numbers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use respfuse_core::augment::SourceSegment;
use respfuse_core::classify::{cross_validate, train_ovo};
use respfuse_core::pipeline::{
    augment, calibration_entry, dataset_vectors, evaluate_subjects, extract, fused_features, observe, prepare,
    simulate_truth, source_segments, EvalReport, PrepInfo, StudyConfig,
};
use respfuse_core::record::{self, format_f64, RecordMeta};
use respfuse_core::{FeatureVector, LabeledSegment, PatternLabel};
use serde::{Deserialize, Serialize};

use crate::tables;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Extract,
    Prep,
    Augment,
    Features,
    Train,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Extract,
        Stage::Prep,
        Stage::Augment,
        Stage::Features,
        Stage::Train,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Extract => "extract",
            Stage::Prep => "prep",
            Stage::Augment => "augment",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

pub struct Workspace {
    root: PathBuf,
    cfg: StudyConfig,
    stamp: String,
    cache: bool,
}

#[derive(Serialize, Deserialize)]
struct SubjectPrep {
    subject: usize,
    #[serde(flatten)]
    info: PrepInfo,
}

fn subject_file(dir: &Path, i: usize, ext: &str) -> PathBuf {
    dir.join(format!("subject_{i:02}.{ext}"))
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

impl Workspace {
    pub fn open(root: &Path, cfg: StudyConfig, cache: bool) -> Result<Self> {
        fs::create_dir_all(root.join(".cache")).with_context(|| format!("creating {}", root.display()))?;
        let stamp = serde_json::to_string_pretty(&cfg)?;
        Ok(Self {
            root: root.to_path_buf(),
            cfg,
            stamp,
            cache,
        })
    }

    fn dir(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.root.join(".cache").join(format!("{}.json", stage.name()))
    }

    fn cached(&self, stage: Stage) -> bool {
        self.cache && fs::read_to_string(self.stamp_path(stage)).is_ok_and(|s| s == self.stamp)
    }

    pub fn run(&self, stage: Stage, json_report: bool) -> Result<()> {
        // reports are cheap and depend on the requested format
        if stage != Stage::Report && self.cached(stage) {
            log::info!("{}: cached", stage.name());
            return Ok(());
        }
        let _ = fs::remove_file(self.stamp_path(stage));
        log::info!("{}: running", stage.name());
        match stage {
            Stage::Synth => self.synth(),
            Stage::Extract => self.extract(),
            Stage::Prep => self.prep(),
            Stage::Augment => self.augment(),
            Stage::Features => self.features(),
            Stage::Train => self.train(),
            Stage::Eval => self.eval(),
            Stage::Report => self.report(json_report),
        }?;
        fs::write(self.stamp_path(stage), &self.stamp)?;
        Ok(())
    }

    fn subjects(&self) -> Vec<usize> {
        (0..self.cfg.subjects).collect()
    }

    fn synth(&self) -> Result<()> {
        let dir = self.dir("records/raw");
        reset_dir(&dir)?;
        self.subjects().par_iter().try_for_each(|&i| -> Result<()> {
            let truth = simulate_truth(&self.cfg, i)?;
            let o = observe(&self.cfg, &truth)?;
            record::save_observations(&subject_file(&dir, i, "obs"), &o, Some(i))?;
            Ok(())
        })
    }

    fn extract(&self) -> Result<()> {
        let src = self.dir("records/raw");
        let dir = self.dir("records/extracted");
        reset_dir(&dir)?;
        self.subjects().par_iter().try_for_each(|&i| -> Result<()> {
            let path = subject_file(&src, i, "obs");
            let (o, _) = record::load_observations(&path).with_context(|| format!("reading {}", path.display()))?;
            let s = extract(&self.cfg, &o).with_context(|| format!("subject {i}"))?;
            let meta = RecordMeta {
                subject: Some(i),
                ..Default::default()
            };
            record::save_signal(&subject_file(&dir, i, "rec"), &s, &meta)?;
            Ok(())
        })
    }

    fn prep(&self) -> Result<()> {
        let src = self.dir("records/extracted");
        let dir = self.dir("records/prepared");
        reset_dir(&dir)?;
        let calib_entry = calibration_entry(&self.cfg.protocol).context("no calibration entry")?;
        let infos = self
            .subjects()
            .par_iter()
            .map(|&i| -> Result<SubjectPrep> {
                let path = subject_file(&src, i, "rec");
                let (s, _) = record::load_signal(&path).with_context(|| format!("reading {}", path.display()))?;
                let truth = simulate_truth(&self.cfg, i)?;
                let calib = truth.recording.ranges[calib_entry].clone();
                let (p, info) = prepare(&self.cfg, &s, &truth.animation, calib).with_context(|| format!("subject {i}"))?;
                let meta = RecordMeta {
                    subject: Some(i),
                    ..Default::default()
                };
                record::save_signal(&subject_file(&dir, i, "rec"), &p, &meta)?;
                Ok(SubjectPrep { subject: i, info })
            })
            .collect::<Result<Vec<_>>>()?;
        fs::write(dir.join("prep.json"), serde_json::to_string_pretty(&infos)? + "\n")?;
        Ok(())
    }

    fn load_prepared(&self, i: usize) -> Result<respfuse_core::RespiratorySignal> {
        let path = subject_file(&self.dir("records/prepared"), i, "rec");
        Ok(record::load_signal(&path).with_context(|| format!("reading {}", path.display()))?.0)
    }

    fn augment(&self) -> Result<()> {
        let dir = self.dir("records/dataset");
        reset_dir(&dir)?;
        let mut sources: Vec<SourceSegment> = Vec::new();
        for i in self.subjects() {
            let truth = simulate_truth(&self.cfg, i)?;
            sources.extend(source_segments(&self.cfg, &truth, &self.load_prepared(i)?)?);
        }
        let dataset = augment(&self.cfg, &sources)?;
        dataset.par_iter().enumerate().try_for_each(|(k, a)| -> Result<()> {
            let meta = RecordMeta {
                label: Some(a.segment.label.code()),
                subject: None,
                target_rr_range: Some(a.segment.target_rr_range),
                provenance: Some(a.provenance.clone()),
            };
            record::save_signal(&dir.join(format!("seg_{k:05}.rec")), &a.segment.signal, &meta)?;
            Ok(())
        })
    }

    fn load_dataset(&self) -> Result<Vec<LabeledSegment>> {
        let dir = self.dir("records/dataset");
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "rec"));
        paths.sort();
        paths
            .par_iter()
            .map(|p| -> Result<LabeledSegment> {
                let (s, meta) = record::load_signal(p).with_context(|| format!("reading {}", p.display()))?;
                let label = meta.pattern()?.with_context(|| format!("{} has no label", p.display()))?;
                let range = meta.target_rr_range.unwrap_or((0.0, 0.0));
                Ok(LabeledSegment::new(s, label, range)?)
            })
            .collect()
    }

    fn features(&self) -> Result<()> {
        let dir = self.dir("features");
        reset_dir(&dir)?;
        self.subjects().par_iter().try_for_each(|&i| -> Result<()> {
            let f = fused_features(&self.cfg, &self.load_prepared(i)?).with_context(|| format!("subject {i}"))?;
            record::save_features(&subject_file(&dir, i, "feat"), &f)?;
            Ok(())
        })?;
        let segments = self.load_dataset()?;
        let vectors = dataset_vectors(&self.cfg, &segments)?;
        let mut out = String::from("label,rr_med,a_med,rr_var_med,a_var_med\n");
        for (v, l) in &vectors {
            out.push_str(&l.code().to_string());
            for x in v.to_array() {
                out.push(',');
                out.push_str(&format_f64(x));
            }
            out.push('\n');
        }
        fs::write(dir.join("dataset.csv"), out)?;
        Ok(())
    }

    fn load_vectors(&self) -> Result<Vec<(FeatureVector, PatternLabel)>> {
        let path = self.dir("features/dataset.csv");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                bail!("{}:{}: expected 5 columns", path.display(), n + 1);
            }
            let code: u8 = f[0].parse()?;
            let label = PatternLabel::from_code(code).with_context(|| format!("unknown label {code}"))?;
            let mut a = [0.0; 4];
            for (k, v) in a.iter_mut().enumerate() {
                *v = f[k + 1].parse()?;
            }
            out.push((FeatureVector::from_array(a), label));
        }
        Ok(out)
    }

    fn train(&self) -> Result<()> {
        let model = train_ovo(&self.load_vectors()?, &self.cfg.svm)?;
        fs::write(self.dir("model.bin"), model.to_bytes())?;
        Ok(())
    }

    fn eval(&self) -> Result<()> {
        let data = self.load_vectors()?;
        let classification = cross_validate(&data, self.cfg.folds, &self.cfg.svm, self.cfg.seed)?;
        let mut truths = Vec::new();
        let mut feats = Vec::new();
        for i in self.subjects() {
            truths.push(simulate_truth(&self.cfg, i)?);
            let path = subject_file(&self.dir("features"), i, "feat");
            feats.push(record::load_features(&path).with_context(|| format!("reading {}", path.display()))?);
        }
        let pairs: Vec<_> = truths.iter().zip(&feats).collect();
        let features = evaluate_subjects(&self.cfg, &pairs)?;
        let report = EvalReport {
            classification,
            features,
        };
        log::info!("cross-validated accuracy {:.4}", report.classification.accuracy());
        fs::write(self.dir("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        Ok(())
    }

    fn report(&self, json: bool) -> Result<()> {
        let path = self.dir("report.json");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let report: EvalReport = serde_json::from_str(&text)?;
        let dir = self.dir("tables");
        reset_dir(&dir)?;
        tables::emit_report(&report, &dir, json)
    }
}
