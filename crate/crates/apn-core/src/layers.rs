//! Hierarchical layer expansion with automatic color shift.
//!
//! A [`LayerTemplate`] is a net fragment using colors `0..span` plus any
//! number of places shared with the base net. Expansion stamps out `copies`
//! shifted instances: copy `k` (1-based) renames every local element with a
//! `_k` suffix and shifts every color literal by `span * k`, so copy `k`
//! owns the color range `span*k ..= span*(k+1)-1`. Per-color policies on
//! transitions entering a copy from a shared place therefore only accept
//! that copy's colors, which is what routes tokens back to their home copy.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::model::{NetBuilder, PolicyKey, Violation};

/// A net fragment to be replicated `copies` times with automatic color shift.
#[derive(Clone, Debug)]
pub struct LayerTemplate {
    pub template: NetBuilder,
    pub copies: u32,
    pub color_span: u32,
}

#[derive(Clone, PartialEq, Debug)]
pub enum ExpandError {
    BaseInvalid(Vec<Violation>),
    TemplateInvalid(Vec<Violation>),
    /// A color literal in the template falls outside `0..span`.
    SpanViolation { element: String, color: i64 },
    /// A color map in the template rewrites a color to outside `0..span`,
    /// which would let tokens escape their copy's range.
    ColorLeak { transition: String, from: i64, to: i64 },
    /// A transition whose input is a shared place carries a wildcard policy
    /// and would accept tokens belonging to any copy.
    WildcardBoundary { transition: String },
    BadParameters(String),
}

impl fmt::Display for ExpandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpandError::BaseInvalid(v) => write!(f, "base net invalid ({} violations)", v.len()),
            ExpandError::TemplateInvalid(v) => {
                write!(f, "template invalid ({} violations)", v.len())
            }
            ExpandError::SpanViolation { element, color } => {
                write!(f, "{element}: color {color} outside template span")
            }
            ExpandError::ColorLeak { transition, from, to } => write!(
                f,
                "transition {transition}: color map {from} -> {to} leaves the template span"
            ),
            ExpandError::WildcardBoundary { transition } => write!(
                f,
                "transition {transition}: wildcard policy on a boundary transition from a shared place"
            ),
            ExpandError::BadParameters(msg) => write!(f, "{msg}"),
        }
    }
}

/// Shift every color literal in the fragment by `offset`: policy keys, color
/// maps (both sides), emit colors, trigger filters, token colors and sensor
/// filters. Structure, names and delays are unchanged.
pub fn color_shift(fragment: &NetBuilder, offset: u32) -> NetBuilder {
    let d = offset as i64;
    let mut out = fragment.clone();
    for t in &mut out.transitions {
        for (key, _) in &mut t.policies {
            if let PolicyKey::Color(c) = key {
                *c += d;
            }
        }
        for (from, to) in &mut t.color_map {
            *from += d;
            *to += d;
        }
        if let Some(c) = &mut t.emit_color {
            *c += d;
        }
    }
    for g in &mut out.triggers {
        for c in &mut g.colors {
            *c += d;
        }
    }
    for tok in &mut out.tokens {
        tok.color += d;
    }
    for s in &mut out.sensors {
        for c in &mut s.filter {
            *c += d;
        }
    }
    for (lo, hi) in &mut out.color_ranges {
        *lo += d;
        *hi += d;
    }
    out
}

/// Rename the fragment's local elements with a copy suffix and retarget
/// references: local places keep the suffix, shared places pass through.
fn suffix_copy(fragment: &NetBuilder, local_places: &BTreeSet<String>, k: u32) -> NetBuilder {
    let rename_place = |name: &str| {
        if local_places.contains(name) {
            format!("{name}_{k}")
        } else {
            name.to_string()
        }
    };
    let mut out = fragment.clone();
    for p in &mut out.places {
        *p = format!("{p}_{k}");
    }
    for t in &mut out.transitions {
        t.name = format!("{}_{k}", t.name);
        for p in t.inputs.iter_mut().chain(t.outputs.iter_mut()) {
            *p = rename_place(p);
        }
    }
    for g in &mut out.triggers {
        g.place = rename_place(&g.place);
        g.target = format!("{}_{k}", g.target);
    }
    for tok in &mut out.tokens {
        tok.place = rename_place(&tok.place);
    }
    for s in &mut out.sensors {
        s.name = format!("{}_{k}", s.name);
        if s.kind.kind_name == "firing_count" {
            s.kind.place_or_transition = format!("{}_{k}", s.kind.place_or_transition);
        } else {
            s.kind.place_or_transition = rename_place(&s.kind.place_or_transition);
        }
    }
    out
}

fn scan_template_colors(template: &NetBuilder, span: i64) -> Result<(), ExpandError> {
    let in_span = |c: i64| (0..span).contains(&c);
    for t in &template.transitions {
        let el = format!("transition {}", t.name);
        for (key, _) in &t.policies {
            if let PolicyKey::Color(c) = key {
                if !in_span(*c) {
                    return Err(ExpandError::SpanViolation { element: el, color: *c });
                }
            }
        }
        for &(from, to) in &t.color_map {
            if !in_span(from) {
                return Err(ExpandError::SpanViolation { element: el, color: from });
            }
            if !in_span(to) {
                return Err(ExpandError::ColorLeak { transition: t.name.clone(), from, to });
            }
        }
        if let Some(c) = t.emit_color {
            if !in_span(c) {
                return Err(ExpandError::SpanViolation { element: el, color: c });
            }
        }
    }
    for g in &template.triggers {
        for &c in &g.colors {
            if !in_span(c) {
                return Err(ExpandError::SpanViolation {
                    element: format!("{} {} -> {}", g.kind, g.place, g.target),
                    color: c,
                });
            }
        }
    }
    for tok in &template.tokens {
        if !in_span(tok.color) {
            return Err(ExpandError::SpanViolation {
                element: format!("tokens at {}", tok.place),
                color: tok.color,
            });
        }
    }
    for s in &template.sensors {
        for &c in &s.filter {
            if !in_span(c) {
                return Err(ExpandError::SpanViolation {
                    element: format!("sensor {}", s.name),
                    color: c,
                });
            }
        }
    }
    Ok(())
}

/// Expand `layer.copies` shifted instances of the template into the base net.
///
/// Copy `k` uses the color range `span*k ..= span*(k+1)-1`; the expanded net
/// records these ranges (plus singleton ranges for colors the base itself
/// uses), and the simulation engine asserts that no token ever leaves them.
pub fn expand_layers(base: &NetBuilder, layer: &LayerTemplate) -> Result<NetBuilder, ExpandError> {
    if layer.copies < 1 {
        return Err(ExpandError::BadParameters("layer copies must be at least 1".into()));
    }
    if layer.color_span < 1 {
        return Err(ExpandError::BadParameters("layer color span must be at least 1".into()));
    }
    let base_violations = base.validate();
    if !base_violations.is_empty() {
        return Err(ExpandError::BaseInvalid(base_violations));
    }
    let base_places: BTreeSet<String> = base.places.iter().cloned().collect();
    let template_violations = layer.template.validate_with_places(&base_places);
    if !template_violations.is_empty() {
        return Err(ExpandError::TemplateInvalid(template_violations));
    }

    let span = layer.color_span as i64;
    scan_template_colors(&layer.template, span)?;

    let local_places: BTreeSet<String> = layer.template.places.iter().cloned().collect();
    for t in &layer.template.transitions {
        let from_shared = t.inputs.iter().any(|p| !local_places.contains(p));
        let has_wildcard = t
            .policies
            .iter()
            .any(|(key, _)| matches!(key, PolicyKey::Wildcard));
        if from_shared && has_wildcard {
            return Err(ExpandError::WildcardBoundary { transition: t.name.clone() });
        }
    }

    let mut out = base.clone();
    for k in 1..=layer.copies {
        let shifted = color_shift(&layer.template, layer.color_span * k);
        let copy = suffix_copy(&shifted, &local_places, k);
        out.places.extend(copy.places);
        out.transitions.extend(copy.transitions);
        out.triggers.extend(copy.triggers);
        out.tokens.extend(copy.tokens);
        out.sensors.extend(copy.sensors);
        out.color_ranges
            .push((span * k as i64, span * (k as i64 + 1) - 1));
    }
    // Colors used by the base net itself stay legal as singleton ranges.
    let mut base_colors = BTreeSet::new();
    for t in &base.transitions {
        for (key, _) in &t.policies {
            if let PolicyKey::Color(c) = key {
                base_colors.insert(*c);
            }
        }
        for &(from, to) in &t.color_map {
            base_colors.insert(from);
            base_colors.insert(to);
        }
        if let Some(c) = t.emit_color {
            base_colors.insert(c);
        }
    }
    for tok in &base.tokens {
        base_colors.insert(tok.color);
    }
    for c in base_colors {
        out.color_ranges.push((c, c));
    }
    Ok(out)
}
