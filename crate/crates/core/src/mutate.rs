//! Variant planning and byte-exact splicing.
//!
//! Each candidate gets a small set of alternative values meant to land far
//! enough from the original to move energy if the parameter matters at all:
//!
//! * integers scale by a factor in both directions, with special cases for
//!   zero and one where scaling is meaningless;
//! * floats scale likewise, except values inside the unit interval shrink
//!   toward zero and grow toward one so they stay inside it;
//! * booleans flip;
//! * enum references swap in a few other variants of the same type, chosen
//!   by a seeded draw so plans reproduce.
//!
//! Replacement text mirrors the original literal: radix, integer suffix and
//! float suffix survive, so a mutated tree still compiles the way the
//! original did.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeded;
use crate::source::{ConstantSite, Radix, SiteId, SiteValue};

/// Knobs for the planner. The defaults are the ones the whole pipeline was
/// validated with; change them only together with a recalibrated threshold.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationPolicy {
    /// Scaling factor for numeric mutation, applied in both directions.
    pub factor: u32,
    /// How many alternative enum variants to try per reference.
    pub enum_alternatives: usize,
    /// Seed for the per-site variant draw.
    pub seed: u64,
}

impl Default for MutationPolicy {
    fn default() -> Self {
        MutationPolicy {
            factor: 8,
            enum_alternatives: 3,
            seed: 42,
        }
    }
}

/// One planned edit: replace `original` at `span` in `file` with
/// `replacement`. The original text doubles as a staleness check when the
/// edit is applied.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedMutation {
    pub site: SiteId,
    pub file: String,
    pub span: (usize, usize),
    pub original: String,
    pub replacement: String,
    /// Position of this variant within the site's plan (0-based).
    pub ordinal: usize,
}

/// Why a site or one of its variants could not be planned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDiagnostic {
    pub site: SiteId,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationPlan {
    pub mutations: Vec<PlannedMutation>,
    pub diagnostics: Vec<PlanDiagnostic>,
}

/// Plans variants for every candidate, in candidate order. Sites that
/// yield no usable variant appear only in the diagnostics.
pub fn plan_mutations(candidates: &[ConstantSite], policy: &MutationPolicy) -> MutationPlan {
    let mut plan = MutationPlan::default();
    for site in candidates {
        let (variants, mut diags) = plan_site(site, policy);
        for (ordinal, replacement) in variants.into_iter().enumerate() {
            plan.mutations.push(PlannedMutation {
                site: site.id.clone(),
                file: site.file.clone(),
                span: site.span,
                original: site.raw_text.clone(),
                replacement,
                ordinal,
            });
        }
        plan.diagnostics.append(&mut diags);
    }
    plan
}

/// Replacement texts for one site, plus diagnostics for variants that had
/// to be dropped (overflow, missing domain, degenerate value).
pub fn plan_site(site: &ConstantSite, policy: &MutationPolicy) -> (Vec<String>, Vec<PlanDiagnostic>) {
    match &site.value {
        SiteValue::Int(v) => plan_int(site, *v, policy),
        SiteValue::Float(v) => plan_float(site, *v, policy),
        SiteValue::Bool(b) => (vec![(!b).to_string()], vec![]),
        SiteValue::Enum(variant) => plan_enum(site, variant, policy),
    }
}

fn plan_int(site: &ConstantSite, v: i64, policy: &MutationPolicy) -> (Vec<String>, Vec<PlanDiagnostic>) {
    let style = IntStyle::of(&site.raw_text, site.radix.unwrap_or(Radix::Dec));
    let f = i128::from(policy.factor);
    let mag = i128::from(v).unsigned_abs();
    let sign: i128 = if v < 0 { -1 } else { 1 };

    let targets: Vec<i128> = if mag == 0 {
        vec![0xff_ff_ff, 0xff, f]
    } else if mag == 1 {
        vec![sign * f, 0]
    } else {
        let grown = sign * (mag as i128) * f;
        let shrunk = sign * ((mag as i128) / f).max(1);
        vec![grown, shrunk]
    };

    let cap = if style.wide {
        i64::MAX as i128
    } else {
        i32::MAX as i128
    };
    let mut out = Vec::new();
    let mut diags = Vec::new();
    for t in targets {
        if t.unsigned_abs() > cap as u128 {
            diags.push(PlanDiagnostic {
                site: site.id.clone(),
                message: format!(
                    "variant {t} overflows the literal's {} range; skipped",
                    if style.wide { "64-bit" } else { "32-bit" }
                ),
            });
            continue;
        }
        if t == i128::from(v) {
            diags.push(PlanDiagnostic {
                site: site.id.clone(),
                message: format!("variant {t} equals the original; skipped"),
            });
            continue;
        }
        out.push(style.format(t as i64));
    }
    (out, diags)
}

fn plan_float(site: &ConstantSite, v: f64, policy: &MutationPolicy) -> (Vec<String>, Vec<PlanDiagnostic>) {
    let style = FloatStyle::of(&site.raw_text);
    let f = f64::from(policy.factor);
    let mag = v.abs();
    let sign = if v.is_sign_negative() { -1.0 } else { 1.0 };

    let targets: Vec<f64> = if mag == 0.0 {
        vec![0.5, 1.0]
    } else if mag < 1.0 {
        vec![sign * (1.0 - (1.0 - mag) / f), sign * (mag / f)]
    } else {
        vec![sign * mag * f, sign * mag / f]
    };

    let mut out = Vec::new();
    let mut diags = Vec::new();
    for t in targets {
        if !t.is_finite() {
            diags.push(PlanDiagnostic {
                site: site.id.clone(),
                message: format!("variant {t} is not a finite value; skipped"),
            });
            continue;
        }
        if t == v {
            diags.push(PlanDiagnostic {
                site: site.id.clone(),
                message: format!("variant {t} equals the original; skipped"),
            });
            continue;
        }
        out.push(style.format(t));
    }
    (out, diags)
}

fn plan_enum(site: &ConstantSite, current: &str, policy: &MutationPolicy) -> (Vec<String>, Vec<PlanDiagnostic>) {
    let Some(ty) = site.enum_type.as_deref() else {
        return (
            vec![],
            vec![PlanDiagnostic {
                site: site.id.clone(),
                message: "enum reference carries no resolved type; skipped".into(),
            }],
        );
    };
    let domain = site
        .enum_domain
        .as_ref()
        .map(|d| d.as_slice())
        .unwrap_or(&[]);
    let mut others: Vec<&str> = domain
        .iter()
        .map(String::as_str)
        .filter(|x| *x != current)
        .collect();
    if others.is_empty() {
        return (
            vec![],
            vec![PlanDiagnostic {
                site: site.id.clone(),
                message: format!("no alternative variants of {ty} available; skipped"),
            }],
        );
    }
    // Per-site stream: the draw depends only on the seed and the site id,
    // not on plan order.
    let mut rng = seeded::rng(policy.seed, &[b"enum-pick", site.id.as_str().as_bytes()]);
    others.shuffle(&mut rng);
    others.truncate(policy.enum_alternatives);
    (others.into_iter().map(String::from).collect(), vec![])
}

/// How the original integer literal was written.
struct IntStyle {
    prefix: &'static str,
    upper_digits: bool,
    suffix: String,
    /// Carries an l/L suffix, so the value range is 64-bit.
    wide: bool,
    radix: Radix,
}

impl IntStyle {
    fn of(raw: &str, radix: Radix) -> Self {
        let body = raw.trim_start_matches('-');
        let suffix: String = body
            .chars()
            .rev()
            .take_while(|c| matches!(c, 'l' | 'L'))
            .collect();
        let wide = !suffix.is_empty();
        let prefix = if body.starts_with("0x") {
            "0x"
        } else if body.starts_with("0X") {
            "0X"
        } else if body.starts_with("0b") {
            "0b"
        } else if body.starts_with("0B") {
            "0B"
        } else {
            ""
        };
        let digits = &body[prefix.len()..body.len() - suffix.len()];
        let upper_digits = digits.chars().any(|c| c.is_ascii_uppercase());
        IntStyle {
            prefix,
            upper_digits,
            suffix,
            wide,
            radix,
        }
    }

    fn format(&self, v: i64) -> String {
        let mag = v.unsigned_abs();
        let digits = match self.radix {
            Radix::Dec => format!("{mag}"),
            Radix::Hex if self.upper_digits => format!("{mag:X}"),
            Radix::Hex => format!("{mag:x}"),
            Radix::Bin => format!("{mag:b}"),
            Radix::Oct => format!("0{mag:o}"),
        };
        let sign = if v < 0 { "-" } else { "" };
        format!("{sign}{}{digits}{}", self.prefix, self.suffix)
    }
}

/// How the original float literal was written.
struct FloatStyle {
    suffix: String,
}

impl FloatStyle {
    fn of(raw: &str) -> Self {
        let suffix: String = raw
            .chars()
            .rev()
            .take_while(|c| matches!(c, 'f' | 'F' | 'd' | 'D'))
            .collect();
        FloatStyle { suffix }
    }

    fn format(&self, v: f64) -> String {
        // Shortest round-trip decimal, with a forced decimal point so the
        // literal keeps reading as a float.
        let mut s = format!("{v}");
        if !s.contains('.') && !s.contains('e') && !s.contains('E') {
            s.push_str(".0");
        }
        format!("{s}{}", self.suffix)
    }
}

/// A splice that has been written to disk, holding everything needed to
/// undo it exactly.
#[derive(Clone, Debug)]
pub struct AppliedMutation {
    pub path: PathBuf,
    pub site: SiteId,
    original_file: Vec<u8>,
}

/// Applies one planned edit under `root`. The bytes at the span must still
/// be the original literal; anything else means the plan is stale and the
/// tree must not be touched.
pub fn apply_mutation(root: &Path, m: &PlannedMutation) -> Result<AppliedMutation, MutateError> {
    let path = root.join(&m.file);
    let bytes = fs::read(&path).map_err(|e| MutateError::Io {
        file: m.file.clone(),
        source: e,
    })?;
    let (lo, hi) = m.span;
    if hi > bytes.len() || lo > hi {
        return Err(MutateError::Stale {
            site: m.site.clone(),
            expected: m.original.clone(),
            found: "<span out of range>".into(),
        });
    }
    let found = &bytes[lo..hi];
    if found != m.original.as_bytes() {
        return Err(MutateError::Stale {
            site: m.site.clone(),
            expected: m.original.clone(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let mut patched = Vec::with_capacity(bytes.len() + m.replacement.len());
    patched.extend_from_slice(&bytes[..lo]);
    patched.extend_from_slice(m.replacement.as_bytes());
    patched.extend_from_slice(&bytes[hi..]);
    fs::write(&path, &patched).map_err(|e| MutateError::Io {
        file: m.file.clone(),
        source: e,
    })?;
    Ok(AppliedMutation {
        path,
        site: m.site.clone(),
        original_file: bytes,
    })
}

/// Restores the exact pre-splice file contents.
pub fn revert_mutation(applied: &AppliedMutation) -> Result<(), MutateError> {
    fs::write(&applied.path, &applied.original_file).map_err(|e| MutateError::Io {
        file: applied.path.display().to_string(),
        source: e,
    })
}

/// Writes a plan as one JSON object per line.
pub fn dump_plan<W: std::io::Write>(mut w: W, plan: &MutationPlan) -> std::io::Result<()> {
    for m in &plan.mutations {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a plan back from the line-per-object form.
pub fn load_plan<R: std::io::Read>(r: R) -> Result<MutationPlan, MutateError> {
    use std::io::BufRead;
    let mut plan = MutationPlan::default();
    for (n, line) in std::io::BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| MutateError::Io {
            file: "<plan>".into(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let m: PlannedMutation =
            serde_json::from_str(&line).map_err(|e| MutateError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        plan.mutations.push(m);
    }
    Ok(plan)
}

#[derive(Debug, Error)]
pub enum MutateError {
    #[error("io on {file}: {source}")]
    Io {
        file: String,
        source: std::io::Error,
    },
    #[error("stale plan at {site}: expected {expected:?}, found {found:?}")]
    Stale {
        site: SiteId,
        expected: String,
        found: String,
    },
    #[error("plan line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{SiteKind, SyntaxContext};
    use std::collections::BTreeSet;

    fn base_site(raw: &str, kind: SiteKind, value: SiteValue) -> ConstantSite {
        let span = (8, 8 + raw.len());
        ConstantSite {
            id: SiteId::new("T.java", span),
            file: "T.java".into(),
            span,
            line: 1,
            kind,
            raw_text: raw.into(),
            value,
            radix: None,
            enum_type: None,
            enum_domain: None,
            contexts: BTreeSet::from([SyntaxContext::Other]),
            enclosure: None,
        }
    }

    fn int_site(raw: &str, value: i64, radix: Radix) -> ConstantSite {
        let mut s = base_site(raw, SiteKind::Int, SiteValue::Int(value));
        s.radix = Some(radix);
        s
    }

    fn float_site(raw: &str, value: f64) -> ConstantSite {
        base_site(raw, SiteKind::Float, SiteValue::Float(value))
    }

    fn enum_site(current: &str, ty: &str, domain: &[&str]) -> ConstantSite {
        let mut s = base_site(current, SiteKind::EnumRef, SiteValue::Enum(current.into()));
        s.enum_type = Some(ty.into());
        s.enum_domain = Some(domain.iter().map(|x| x.to_string()).collect());
        s
    }

    fn variants(site: &ConstantSite) -> Vec<String> {
        let (v, diags) = plan_site(site, &MutationPolicy::default());
        assert!(diags.is_empty(), "unexpected diagnostics: {diags:?}");
        v
    }

    #[test]
    fn zero_tries_three_magnitudes() {
        let s = int_site("0", 0, Radix::Dec);
        assert_eq!(variants(&s), vec!["16777215", "255", "8"]);
    }

    #[test]
    fn one_scales_up_and_zeroes_out() {
        let s = int_site("1", 1, Radix::Dec);
        assert_eq!(variants(&s), vec!["8", "0"]);
    }

    #[test]
    fn ints_scale_by_the_factor_both_ways() {
        assert_eq!(variants(&int_site("512", 512, Radix::Dec)), vec!["4096", "64"]);
        assert_eq!(variants(&int_site("12", 12, Radix::Dec)), vec!["96", "1"]);
        // Shrinking floors at one so the variant stays a usable value.
        assert_eq!(variants(&int_site("2", 2, Radix::Dec)), vec!["16", "1"]);
    }

    #[test]
    fn negative_ints_mutate_by_magnitude_and_keep_sign() {
        assert_eq!(variants(&int_site("-4", -4, Radix::Dec)), vec!["-32", "-1"]);
        assert_eq!(variants(&int_site("-1", -1, Radix::Dec)), vec!["-8", "0"]);
    }

    #[test]
    fn radix_and_suffix_styles_survive_mutation() {
        assert_eq!(
            variants(&int_site("0xFF", 255, Radix::Hex)),
            vec!["0x7F8", "0x1F"]
        );
        assert_eq!(
            variants(&int_site("0xff", 255, Radix::Hex)),
            vec!["0x7f8", "0x1f"]
        );
        assert_eq!(variants(&int_site("30L", 30, Radix::Dec)), vec!["240L", "3L"]);
        assert_eq!(
            variants(&int_site("0b101", 5, Radix::Bin)),
            vec!["0b101000", "0b1"]
        );
    }

    #[test]
    fn plain_int_variants_respect_the_32_bit_range() {
        let s = int_site("400000000", 400_000_000, Radix::Dec);
        let (v, diags) = plan_site(&s, &MutationPolicy::default());
        assert_eq!(v, vec!["50000000"]);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("32-bit"));
    }

    #[test]
    fn wide_int_variants_respect_the_64_bit_range() {
        let ok = int_site("3000000000L", 3_000_000_000, Radix::Dec);
        assert_eq!(variants(&ok), vec!["24000000000L", "375000000L"]);

        let s = int_site("9000000000000000000L", 9_000_000_000_000_000_000, Radix::Dec);
        let (v, diags) = plan_site(&s, &MutationPolicy::default());
        assert_eq!(v, vec!["1125000000000000000L"]);
        assert!(diags[0].message.contains("64-bit"));
    }

    #[test]
    fn float_zero_probes_half_and_one() {
        assert_eq!(variants(&float_site("0.0", 0.0)), vec!["0.5", "1.0"]);
    }

    #[test]
    fn unit_interval_floats_stay_inside_it() {
        assert_eq!(
            variants(&float_site("0.75", 0.75)),
            vec!["0.96875", "0.09375"]
        );
        assert_eq!(
            variants(&float_site("0.25f", 0.25)),
            vec!["0.90625f", "0.03125f"]
        );
    }

    #[test]
    fn larger_floats_scale_by_the_factor() {
        assert_eq!(variants(&float_site("4.0", 4.0)), vec!["32.0", "0.5"]);
        assert_eq!(variants(&float_site("1.0", 1.0)), vec!["8.0", "0.125"]);
    }

    #[test]
    fn negative_floats_mirror_the_positive_scheme() {
        assert_eq!(
            variants(&float_site("-0.5", -0.5)),
            vec!["-0.9375", "-0.0625"]
        );
    }

    #[test]
    fn float_emission_always_reads_as_a_float() {
        let s = float_site("2.0", 2.0);
        for v in variants(&s) {
            assert!(
                v.contains('.') || v.contains('e'),
                "{v} would re-lex as an int"
            );
        }
    }

    #[test]
    fn bools_flip() {
        let s = base_site("true", SiteKind::Bool, SiteValue::Bool(true));
        assert_eq!(variants(&s), vec!["false"]);
        let s = base_site("false", SiteKind::Bool, SiteValue::Bool(false));
        assert_eq!(variants(&s), vec!["true"]);
    }

    #[test]
    fn enum_draw_is_deterministic_distinct_and_in_domain() {
        let domain = ["NEAREST", "LINEAR", "CUBIC", "AREA", "LANCZOS"];
        let s = enum_site("NEAREST", "Interp", &domain);
        let first = variants(&s);
        let second = variants(&s);
        assert_eq!(first, second);
        assert_eq!(first.len(), 3);
        let set: BTreeSet<_> = first.iter().collect();
        assert_eq!(set.len(), 3);
        for v in &first {
            assert_ne!(v, "NEAREST");
            assert!(domain.contains(&v.as_str()));
        }
    }

    #[test]
    fn small_domains_yield_fewer_alternatives() {
        let s = enum_site("ON", "Toggle", &["ON", "OFF"]);
        assert_eq!(variants(&s), vec!["OFF"]);
    }

    #[test]
    fn enums_without_a_domain_are_diagnosed() {
        let mut s = enum_site("DAYS", "TimeUnit", &["DAYS"]);
        let (v, diags) = plan_site(&s, &MutationPolicy::default());
        assert!(v.is_empty());
        assert_eq!(diags.len(), 1);

        s.enum_type = None;
        let (v, diags) = plan_site(&s, &MutationPolicy::default());
        assert!(v.is_empty());
        assert!(diags[0].message.contains("no resolved type"));
    }

    #[test]
    fn plans_keep_candidate_order_and_number_variants() {
        let sites = vec![
            int_site("512", 512, Radix::Dec),
            float_site("0.75", 0.75),
        ];
        let plan = plan_mutations(&sites, &MutationPolicy::default());
        assert_eq!(plan.mutations.len(), 4);
        assert_eq!(plan.mutations[0].replacement, "4096");
        assert_eq!(plan.mutations[0].ordinal, 0);
        assert_eq!(plan.mutations[1].replacement, "64");
        assert_eq!(plan.mutations[1].ordinal, 1);
        assert_eq!(plan.mutations[2].replacement, "0.96875");
        assert_eq!(plan.mutations[2].ordinal, 0);
    }

    #[test]
    fn apply_splices_and_revert_restores_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let original = b"class T { int buf = 512; }\n".to_vec();
        std::fs::write(dir.path().join("T.java"), &original).unwrap();
        let m = PlannedMutation {
            site: SiteId::new("T.java", (20, 23)),
            file: "T.java".into(),
            span: (20, 23),
            original: "512".into(),
            replacement: "4096".into(),
            ordinal: 0,
        };
        let applied = apply_mutation(dir.path(), &m).unwrap();
        let mutated = std::fs::read(dir.path().join("T.java")).unwrap();
        assert_eq!(mutated, b"class T { int buf = 4096; }\n");
        revert_mutation(&applied).unwrap();
        assert_eq!(std::fs::read(dir.path().join("T.java")).unwrap(), original);
    }

    #[test]
    fn stale_trees_refuse_the_splice() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("T.java"), b"class T { int buf = 512; }\n").unwrap();
        let m = PlannedMutation {
            site: SiteId::new("T.java", (20, 23)),
            file: "T.java".into(),
            span: (20, 23),
            original: "512".into(),
            replacement: "4096".into(),
            ordinal: 0,
        };
        apply_mutation(dir.path(), &m).unwrap();
        let err = apply_mutation(dir.path(), &m).unwrap_err();
        assert!(matches!(err, MutateError::Stale { .. }));
    }

    #[test]
    fn plans_round_trip_through_jsonl() {
        let sites = vec![int_site("12", 12, Radix::Dec)];
        let plan = plan_mutations(&sites, &MutationPolicy::default());
        let mut buf = Vec::new();
        dump_plan(&mut buf, &plan).unwrap();
        let back = load_plan(&buf[..]).unwrap();
        assert_eq!(back.mutations, plan.mutations);
    }
}
