use std::fmt::Write as _;

use crate::encoders::EncoderKind;
use crate::error::Error;
use crate::fusion::{ModalityGroup, Variant};
use crate::training::PretrainEval;
use crate::Result;

/// Published full-scale values, kept as annotations; nothing here is
/// reproduced or asserted.
pub const REFERENCE_PRETRAIN: [(&str, f64, f64); 2] = [("base", 51.12, 74.41), ("lstm", 62.75, 91.37)];
pub const REFERENCE_SCORES: [(Variant, ModalityGroup, f64); 6] = [
    (Variant::Base, ModalityGroup::TactileAndVision, 3.736),
    (Variant::Base, ModalityGroup::TactileOnly, 1.414),
    (Variant::Even, ModalityGroup::TactileAndVision, 3.582),
    (Variant::Even, ModalityGroup::TactileOnly, 2.480),
    (Variant::Aware, ModalityGroup::TactileAndVision, 4.031),
    (Variant::Aware, ModalityGroup::TactileOnly, 2.605),
];

#[derive(Clone, Debug, PartialEq)]
pub enum PretrainOutcome {
    Done(PretrainEval),
    Failed(String),
}

/// Held-out metrics of one pretrained encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainRow {
    pub kind: EncoderKind,
    pub seed: u64,
    pub outcome: PretrainOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellOutcome {
    Done { score: f64, nonempty: f64, test_loss: f64 },
    Failed(String),
}

/// Held-out metrics of one finetuned (variant, group) model.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub variant: Variant,
    pub group: ModalityGroup,
    pub seed: u64,
    pub outcome: CellOutcome,
}

impl CellResult {
    pub fn score(&self) -> Option<f64> {
        match self.outcome {
            CellOutcome::Done { score, .. } => Some(score),
            CellOutcome::Failed(_) => None,
        }
    }
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for one value).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std =
            if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Some(Self { mean, std, n })
    }
}

/// One directional comparison between cells.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderingCheck {
    pub key: &'static str,
    pub holds: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub seeds: Vec<u64>,
    pub fingerprint: String,
    pub pretrain: Vec<PretrainRow>,
    pub cells: Vec<CellResult>,
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn kind_label(kind: EncoderKind) -> &'static str {
    match kind {
        EncoderKind::Lstm => "lstm",
        EncoderKind::SingleFrame => "base",
    }
}

impl MetricsReport {
    /// Top-1 never exceeds top-5 and every score lies in `[0, 5]`.
    pub fn validate(&self) -> Result<()> {
        for r in &self.pretrain {
            if let PretrainOutcome::Done(e) = &r.outcome {
                if e.top1 > e.top5 || e.retrieval_top1 > e.retrieval_top5 {
                    return Err(Error::Invariant(format!(
                        "{} seed {}: top-1 {} exceeds top-5 {}",
                        r.kind, r.seed, e.top1, e.top5
                    )));
                }
            }
        }
        for c in &self.cells {
            if let Some(s) = c.score() {
                if !(0.0..=5.0).contains(&s) {
                    return Err(Error::Invariant(format!("{} {} score {s} outside [0, 5]", c.variant, c.group)));
                }
            }
        }
        Ok(())
    }

    pub fn pretrain_top1(&self, kind: EncoderKind) -> Vec<f64> {
        self.pretrain
            .iter()
            .filter(|r| r.kind == kind)
            .filter_map(|r| match &r.outcome {
                PretrainOutcome::Done(e) => Some(e.top1),
                PretrainOutcome::Failed(_) => None,
            })
            .collect()
    }

    pub fn cell(&self, variant: Variant, group: ModalityGroup, seed: u64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.variant == variant && c.group == group && c.seed == seed)
    }

    /// Scores of a cell across seeds, failed runs skipped.
    pub fn scores(&self, variant: Variant, group: ModalityGroup) -> Vec<f64> {
        self.seeds.iter().filter_map(|&s| self.cell(variant, group, s).and_then(CellResult::score)).collect()
    }

    pub fn score_stat(&self, variant: Variant, group: ModalityGroup) -> Option<Stat> {
        Stat::of(&self.scores(variant, group))
    }

    fn complete(&self, variant: Variant, group: ModalityGroup) -> bool {
        self.scores(variant, group).len() == self.seeds.len()
    }

    /// The directional comparisons tracked by the ablation.
    pub fn orderings(&self) -> Vec<OrderingCheck> {
        use ModalityGroup::*;
        use Variant::*;
        let mut out = Vec::new();
        let mean = |v: &[f64]| Stat::of(v).map(|s| s.mean);

        let (l, b) = (self.pretrain_top1(EncoderKind::Lstm), self.pretrain_top1(EncoderKind::SingleFrame));
        let holds = l.len() == self.seeds.len() && b.len() == self.seeds.len() && mean(&l) > mean(&b);
        out.push(OrderingCheck {
            key: "pretrain_lstm_top1_gt_base",
            holds,
            detail: format!("lstm {:?} vs base {:?} (mean top-1)", mean(&l), mean(&b)),
        });

        let mut per_seed = Vec::new();
        let mut all = self.complete(Aware, TactileOnly) && self.complete(Base, TactileOnly);
        for &s in &self.seeds {
            let a = self.cell(Aware, TactileOnly, s).and_then(CellResult::score);
            let b = self.cell(Base, TactileOnly, s).and_then(CellResult::score);
            let ok = matches!((a, b), (Some(a), Some(b)) if a > b);
            all &= ok;
            per_seed.push(format!("seed {s}: {}", if ok { "ok" } else { "violated" }));
        }
        out.push(OrderingCheck {
            key: "tactile_only_aware_gt_base_each_seed",
            holds: all,
            detail: per_seed.join("; "),
        });

        let pair = |key: &'static str, hi: (Variant, ModalityGroup), lo: (Variant, ModalityGroup)| {
            let (a, b) = (self.score_stat(hi.0, hi.1), self.score_stat(lo.0, lo.1));
            let holds = self.complete(hi.0, hi.1)
                && self.complete(lo.0, lo.1)
                && a.zip(b).is_some_and(|(a, b)| a.mean >= b.mean);
            OrderingCheck {
                key,
                holds,
                detail: format!(
                    "{} {} {:?} vs {} {} {:?} (mean score)",
                    hi.0,
                    hi.1,
                    a.map(|s| s.mean),
                    lo.0,
                    lo.1,
                    b.map(|s| s.mean)
                ),
            }
        };
        out.push(pair("tactile_only_aware_ge_even_mean", (Aware, TactileOnly), (Even, TactileOnly)));
        out.push(pair("base_vision_ge_tactile_only_mean", (Base, TactileAndVision), (Base, TactileOnly)));
        out.push(pair("even_vision_ge_tactile_only_mean", (Even, TactileAndVision), (Even, TactileOnly)));
        out.push(pair("aware_vision_ge_tactile_only_mean", (Aware, TactileAndVision), (Aware, TactileOnly)));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "section,model,group,seed,top1,top5,retrieval_top1,retrieval_top5,score,nonempty,test_loss,status\n",
        );
        for r in &self.pretrain {
            let model = kind_label(r.kind);
            match &r.outcome {
                PretrainOutcome::Done(e) => {
                    let _ = writeln!(
                        s,
                        "pretrain,{model},,{},{},{},{},{},,,{},ok",
                        r.seed,
                        f4(e.top1),
                        f4(e.top5),
                        f4(e.retrieval_top1),
                        f4(e.retrieval_top5),
                        f4(e.loss)
                    );
                }
                PretrainOutcome::Failed(_) => {
                    let _ = writeln!(s, "pretrain,{model},,{},,,,,,,,failed", r.seed);
                }
            }
        }
        for c in &self.cells {
            match &c.outcome {
                CellOutcome::Done { score, nonempty, test_loss } => {
                    let _ = writeln!(
                        s,
                        "finetune,{},{},{},,,,,{},{},{},ok",
                        c.variant,
                        c.group,
                        c.seed,
                        f4(*score),
                        f4(*nonempty),
                        f4(*test_loss)
                    );
                }
                CellOutcome::Failed(_) => {
                    let _ = writeln!(s, "finetune,{},{},{},,,,,,,,failed", c.variant, c.group, c.seed);
                }
            }
        }
        s
    }

    /// One `key=value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds={}", seeds.join(","));
        let _ = writeln!(s, "config_fingerprint={}", self.fingerprint);
        for r in &self.pretrain {
            let p = format!("pretrain.{}.seed{}", kind_label(r.kind), r.seed);
            match &r.outcome {
                PretrainOutcome::Done(e) => {
                    let _ = writeln!(s, "{p}.top1={}", f4(e.top1));
                    let _ = writeln!(s, "{p}.top5={}", f4(e.top5));
                    let _ = writeln!(s, "{p}.retrieval_top1={}", f4(e.retrieval_top1));
                    let _ = writeln!(s, "{p}.retrieval_top5={}", f4(e.retrieval_top5));
                    let _ = writeln!(s, "{p}.test_loss={}", f4(e.loss));
                }
                PretrainOutcome::Failed(msg) => {
                    let _ = writeln!(s, "{p}.failed={}", msg.replace('\n', " "));
                }
            }
        }
        for kind in [EncoderKind::SingleFrame, EncoderKind::Lstm] {
            if let Some(st) = Stat::of(&self.pretrain_top1(kind)) {
                let _ = writeln!(s, "pretrain.{}.top1.mean={}", kind_label(kind), f4(st.mean));
                let _ = writeln!(s, "pretrain.{}.top1.std={}", kind_label(kind), f4(st.std));
            }
        }
        for c in &self.cells {
            let p = format!("cell.{}.{}.seed{}", c.variant, c.group, c.seed);
            match &c.outcome {
                CellOutcome::Done { score, nonempty, test_loss } => {
                    let _ = writeln!(s, "{p}.score={}", f4(*score));
                    let _ = writeln!(s, "{p}.nonempty={}", f4(*nonempty));
                    let _ = writeln!(s, "{p}.test_loss={}", f4(*test_loss));
                }
                CellOutcome::Failed(msg) => {
                    let _ = writeln!(s, "{p}.failed={}", msg.replace('\n', " "));
                }
            }
        }
        for v in Variant::ALL {
            for g in ModalityGroup::ALL {
                if let Some(st) = self.score_stat(v, g) {
                    let _ = writeln!(s, "cell.{v}.{g}.score.mean={}", f4(st.mean));
                    let _ = writeln!(s, "cell.{v}.{g}.score.std={}", f4(st.std));
                    let _ = writeln!(s, "cell.{v}.{g}.score.n={}", st.n);
                }
            }
        }
        for (name, t1, t5) in REFERENCE_PRETRAIN {
            let _ = writeln!(s, "reference.pretrain.{name}.top1={t1} (not reproduced)");
            let _ = writeln!(s, "reference.pretrain.{name}.top5={t5} (not reproduced)");
        }
        for (v, g, score) in REFERENCE_SCORES {
            let _ = writeln!(s, "reference.cell.{v}.{g}.score={score} (not reproduced)");
        }
        for o in self.orderings() {
            let _ = writeln!(s, "ordering.{}={}", o.key, if o.holds { "pass" } else { "fail" });
            let _ = writeln!(s, "ordering.{}.detail={}", o.key, o.detail);
        }
        s
    }

    /// Bar chart of mean keyword score per cell with one-std whiskers.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 360.0;
        const LEFT: f64 = 60.0;
        const BOTTOM: f64 = 300.0;
        const TOP: f64 = 40.0;
        let y = |score: f64| BOTTOM - (BOTTOM - TOP) * score / 5.0;
        let colors = ["#8c8c8c", "#4c78a8", "#f58518"];
        let mut s = String::new();
        let _ =
            writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
        let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">Mean keyword score (0-5)</text>"#,
            W / 2.0
        );
        for tick in 0..=5 {
            let ty = y(tick as f64);
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{ty}" x2="{}" y2="{ty}" stroke="#dddddd"/>"##, W - 20.0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{tick}</text>"#,
                LEFT - 6.0,
                ty + 4.0
            );
        }
        let bar = 48.0;
        for (gi, g) in ModalityGroup::ALL.into_iter().enumerate() {
            let x0 = LEFT + 40.0 + gi as f64 * 280.0;
            for (vi, v) in Variant::ALL.into_iter().enumerate() {
                let x = x0 + vi as f64 * (bar + 16.0);
                if let Some(st) = self.score_stat(v, g) {
                    let top = y(st.mean);
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x}" y="{top:.2}" width="{bar}" height="{:.2}" fill="{}"/>"#,
                        BOTTOM - top,
                        colors[vi]
                    );
                    let cx = x + bar / 2.0;
                    let (lo, hi) = (y((st.mean - st.std).max(0.0)), y((st.mean + st.std).min(5.0)));
                    let _ = writeln!(s, r##"<line x1="{cx}" y1="{lo:.2}" x2="{cx}" y2="{hi:.2}" stroke="#000000"/>"##);
                    let _ = writeln!(
                        s,
                        r#"<text x="{cx}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">{:.2}</text>"#,
                        hi - 4.0,
                        st.mean
                    );
                }
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{v}</text>"#,
                    x + bar / 2.0,
                    BOTTOM + 16.0
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{g}</text>"#,
                x0 + 1.5 * bar + 16.0,
                BOTTOM + 36.0
            );
        }
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{BOTTOM}" x2="{}" y2="{BOTTOM}" stroke="#000000"/>"##, W - 20.0);
        s.push_str("</svg>\n");
        s
    }
}
