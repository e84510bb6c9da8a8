//! Ranking metrics for response selection: recall-at-k over n candidates,
//! mean average precision, mean reciprocal rank, precision-at-1, with
//! bucketed breakdowns by context turn count and mean utterance length.
//!
//! Candidates are ranked by score descending; ties break toward the lower
//! candidate index so results never depend on sort internals. Instances
//! without a positive candidate are excluded from MAP/MRR/P@1 (the
//! exclusion is counted) and can only miss in recall.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::DialogueExample;
use crate::{Error, Result};

/// One scored context: candidate scores plus binary relevance labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingInstance {
    pub id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    /// Context turn count, for turn-bucketed reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turns: Option<u32>,
    /// Mean words per context utterance, for length-bucketed reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_utterance_words: Option<f64>,
}

impl RankingInstance {
    pub fn validate(&self) -> Result<()> {
        if self.scores.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "instance {}: {} candidates, need at least 2",
                self.id,
                self.scores.len()
            )));
        }
        if self.scores.len() != self.labels.len() {
            return Err(Error::Shape(format!(
                "instance {}: {} scores vs {} labels",
                self.id,
                self.scores.len(),
                self.labels.len()
            )));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("instance {} scores", self.id)));
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument(format!("instance {}: non-binary label", self.id)));
        }
        Ok(())
    }

    pub fn n_cand(&self) -> usize {
        self.scores.len()
    }

    fn has_positive(&self) -> bool {
        self.labels.iter().any(|&l| l == 1)
    }
}

/// Candidate indexes ordered by score descending, ties toward lower index.
pub fn ranked_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores").then(a.cmp(&b)));
    idx
}

/// 1-based ranks of the positive candidates, ascending.
fn positive_ranks(inst: &RankingInstance) -> Vec<usize> {
    ranked_indices(&inst.scores)
        .iter()
        .enumerate()
        .filter(|(_, &c)| inst.labels[c] == 1)
        .map(|(r, _)| r + 1)
        .collect()
}

/// Whether any positive lands in the top `k`. Positive-free instances miss.
pub fn recall_hit(inst: &RankingInstance, k: usize) -> Result<bool> {
    if k == 0 || k > inst.n_cand() {
        return Err(Error::InvalidArgument(format!(
            "k={} with {} candidates",
            k,
            inst.n_cand()
        )));
    }
    Ok(positive_ranks(inst).first().is_some_and(|&r| r <= k))
}

/// Mean over positives of (positives at or above that rank / rank).
/// `None` when the instance has no positive.
pub fn average_precision(inst: &RankingInstance) -> Option<f64> {
    let ranks = positive_ranks(inst);
    if ranks.is_empty() {
        return None;
    }
    let ap = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| (i + 1) as f64 / r as f64)
        .sum::<f64>()
        / ranks.len() as f64;
    Some(ap)
}

/// `1 / rank` of the best-ranked positive; `None` without positives.
pub fn reciprocal_rank(inst: &RankingInstance) -> Option<f64> {
    positive_ranks(inst).first().map(|&r| 1.0 / r as f64)
}

/// Whether the top-scored candidate is positive; `None` without positives.
pub fn top1_hit(inst: &RankingInstance) -> Option<bool> {
    if !inst.has_positive() {
        return None;
    }
    let top = ranked_indices(&inst.scores)[0];
    Some(inst.labels[top] == 1)
}

/// One `R_n@k` cell: averaged over the instances with exactly `n`
/// candidates; `value` is `None` when no instance matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub n: usize,
    pub k: usize,
    pub value: Option<f64>,
    pub instances: usize,
}

/// Aggregate metrics over one instance set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreMetrics {
    pub instances: usize,
    /// Instances without a positive, excluded from MAP/MRR/P@1.
    pub excluded_no_positive: usize,
    pub recall: Vec<RecallEntry>,
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
}

/// Default `(n, k)` grid: binary validation plus 10-candidate test cells.
pub fn default_recall_pairs() -> Vec<(usize, usize)> {
    vec![(2, 1), (10, 1), (10, 2), (10, 5)]
}

/// Computes recall cells, MAP, MRR, and P@1 over `instances`.
pub fn compute_metrics(
    instances: &[RankingInstance],
    recall_pairs: &[(usize, usize)],
) -> Result<CoreMetrics> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("no instances to evaluate".into()));
    }
    for inst in instances {
        inst.validate()?;
    }
    let mut recall = Vec::with_capacity(recall_pairs.len());
    for &(n, k) in recall_pairs {
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("recall cell n={} k={}", n, k)));
        }
        let mut hits = 0usize;
        let mut total = 0usize;
        for inst in instances.iter().filter(|i| i.n_cand() == n) {
            total += 1;
            if recall_hit(inst, k)? {
                hits += 1;
            }
        }
        let value = (total > 0).then(|| hits as f64 / total as f64);
        recall.push(RecallEntry { n, k, value, instances: total });
    }

    let mut ap_sum = 0.0;
    let mut rr_sum = 0.0;
    let mut p1_sum = 0.0;
    let mut scored = 0usize;
    for inst in instances {
        let Some(ap) = average_precision(inst) else { continue };
        scored += 1;
        ap_sum += ap;
        rr_sum += reciprocal_rank(inst).expect("positive exists");
        p1_sum += top1_hit(inst).expect("positive exists") as u8 as f64;
    }
    let denom = scored.max(1) as f64;
    Ok(CoreMetrics {
        instances: instances.len(),
        excluded_no_positive: instances.len() - scored,
        recall,
        map: ap_sum / denom,
        mrr: rr_sum / denom,
        p_at_1: p1_sum / denom,
    })
}

// ── bucketed reports ────────────────────────────────────────────────────

/// Half-open bucket edges; the final bucket absorbs everything at or above
/// its lower edge so counts always sum to the instance total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub turn_edges: Vec<u32>,
    pub len_edges: Vec<f64>,
}

impl Default for BucketSpec {
    fn default() -> Self {
        BucketSpec {
            turn_edges: vec![0, 4, 8, 12, 16, 20],
            len_edges: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
        }
    }
}

impl BucketSpec {
    pub fn validate(&self) -> Result<()> {
        if self.turn_edges.len() < 2 || self.len_edges.len() < 2 {
            return Err(Error::Config("bucket specs need at least two edges".into()));
        }
        if self.turn_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("turn edges not increasing: {:?}", self.turn_edges)));
        }
        if self.len_edges.windows(2).any(|w| w[0] >= w[1] || !w[1].is_finite()) {
            return Err(Error::Config(format!("length edges invalid: {:?}", self.len_edges)));
        }
        Ok(())
    }
}

fn bucket_index(edges_len: usize, position: usize) -> usize {
    position.min(edges_len - 2)
}

fn assign<T: PartialOrd>(edges: &[T], v: &T) -> usize {
    let below = edges[1..].iter().filter(|e| *e <= v).count();
    bucket_index(edges.len(), below)
}

fn bucket_label<T: std::fmt::Display>(edges: &[T], i: usize) -> String {
    if i + 2 == edges.len() {
        format!("{}+", edges[i])
    } else {
        format!("{}-{}", edges[i], edges[i + 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub label: String,
    pub count: usize,
    /// `None` when the bucket is empty.
    pub metrics: Option<CoreMetrics>,
}

fn bucketize<'a>(
    instances: &'a [RankingInstance],
    labels: Vec<String>,
    idx_of: impl Fn(&RankingInstance) -> usize,
    recall_pairs: &[(usize, usize)],
) -> Result<Vec<BucketReport>> {
    let mut groups: Vec<Vec<&'a RankingInstance>> = vec![Vec::new(); labels.len()];
    for inst in instances {
        groups[idx_of(inst)].push(inst);
    }
    labels
        .into_iter()
        .zip(groups)
        .map(|(label, group)| {
            let metrics = if group.is_empty() {
                None
            } else {
                let owned: Vec<RankingInstance> = group.into_iter().cloned().collect();
                Some(compute_metrics(&owned, recall_pairs)?)
            };
            let count = metrics.as_ref().map_or(0, |m| m.instances);
            Ok(BucketReport { label, count, metrics })
        })
        .collect()
}

/// Full report: overall metrics plus per-bucket breakdowns. Bucketed
/// sections appear only when every instance carries the needed metadata,
/// keeping the counts-sum-to-total invariant meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: CoreMetrics,
    pub turn_buckets: Vec<BucketReport>,
    pub len_buckets: Vec<BucketReport>,
}

pub fn evaluate_instances(
    instances: &[RankingInstance],
    spec: &BucketSpec,
    recall_pairs: &[(usize, usize)],
) -> Result<MetricReport> {
    spec.validate()?;
    let overall = compute_metrics(instances, recall_pairs)?;

    let turn_buckets = if instances.iter().all(|i| i.turns.is_some()) {
        let labels: Vec<String> =
            (0..spec.turn_edges.len() - 1).map(|i| bucket_label(&spec.turn_edges, i)).collect();
        bucketize(
            instances,
            labels,
            |i| assign(&spec.turn_edges, &i.turns.expect("checked")),
            recall_pairs,
        )?
    } else {
        Vec::new()
    };
    let len_buckets = if instances.iter().all(|i| i.mean_utterance_words.is_some()) {
        let labels: Vec<String> =
            (0..spec.len_edges.len() - 1).map(|i| bucket_label(&spec.len_edges, i)).collect();
        bucketize(
            instances,
            labels,
            |i| assign(&spec.len_edges, &i.mean_utterance_words.expect("checked")),
            recall_pairs,
        )?
    } else {
        Vec::new()
    };
    Ok(MetricReport { overall, turn_buckets, len_buckets })
}

/// Scores every example with `score_fn` and evaluates the resulting
/// instances. The scorer returns one score per candidate.
pub fn evaluate_with(
    mut score_fn: impl FnMut(&DialogueExample) -> Result<Vec<f64>>,
    dataset: &[DialogueExample],
    spec: &BucketSpec,
    recall_pairs: &[(usize, usize)],
) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation dataset".into()));
    }
    let mut instances = Vec::with_capacity(dataset.len());
    for ex in dataset {
        ex.validate()?;
        let scores = score_fn(ex)?;
        if scores.len() != ex.candidates.len() {
            return Err(Error::Shape(format!(
                "example {}: {} scores for {} candidates",
                ex.id,
                scores.len(),
                ex.candidates.len()
            )));
        }
        let words: usize =
            ex.context.iter().map(|u| u.text.split_whitespace().count()).sum();
        instances.push(RankingInstance {
            id: ex.id.clone(),
            scores,
            labels: ex.candidates.iter().map(|c| c.label).collect(),
            turns: Some(ex.context.len() as u32),
            mean_utterance_words: Some(words as f64 / ex.context.len() as f64),
        });
    }
    evaluate_instances(&instances, spec, recall_pairs)
}

// ── prediction files and report output ──────────────────────────────────

/// Reads line-delimited `{"id", "scores", "labels", ...}` records so the
/// metric suite runs without a live model.
pub fn read_predictions(path: &Path) -> Result<Vec<RankingInstance>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: RankingInstance = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {}", i + 1, e)))?;
        inst.validate().map_err(|e| Error::Data(format!("line {}: {}", i + 1, e)))?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_report_json(report: &MetricReport, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Key/value text block, one metric per line.
pub fn format_report_text(report: &MetricReport) -> String {
    let mut out = String::new();
    let core = |s: &mut String, prefix: &str, m: &CoreMetrics| {
        use std::fmt::Write;
        writeln!(s, "{}instances\t{}", prefix, m.instances).unwrap();
        writeln!(s, "{}excluded_no_positive\t{}", prefix, m.excluded_no_positive).unwrap();
        for r in &m.recall {
            match r.value {
                Some(v) => writeln!(s, "{}r{}@{}\t{:.6}", prefix, r.n, r.k, v).unwrap(),
                None => writeln!(s, "{}r{}@{}\tn/a", prefix, r.n, r.k).unwrap(),
            }
        }
        writeln!(s, "{}map\t{:.6}", prefix, m.map).unwrap();
        writeln!(s, "{}mrr\t{:.6}", prefix, m.mrr).unwrap();
        writeln!(s, "{}p@1\t{:.6}", prefix, m.p_at_1).unwrap();
    };
    core(&mut out, "", &report.overall);
    for (name, buckets) in
        [("turns", &report.turn_buckets), ("words", &report.len_buckets)]
    {
        for b in buckets {
            let prefix = format!("{}[{}].", name, b.label);
            match &b.metrics {
                Some(m) => core(&mut out, &prefix, m),
                None => {
                    use std::fmt::Write;
                    writeln!(out, "{}instances\t0", prefix).unwrap();
                }
            }
        }
    }
    out
}
