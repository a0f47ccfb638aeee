//! Net structure: places, transitions, triggers, initial tokens and sensors.
//!
//! Nets are built through [`NetBuilder`], which works on names and may hold
//! arbitrarily broken input (so that validation can report it), and are then
//! compiled by [`NetBuilder::finish`] into an immutable, index-based [`Net`]
//! whose invariants are guaranteed. Compilation canonicalizes the net:
//! elements are sorted by name, so two builders that differ only in
//! declaration order compile to equal nets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

/// Simulated time; the unit is model-defined.
pub type Time = f64;

/// Discrete token label selecting transition policies and trigger filters.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Color(pub u32);

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index of a place within its compiled net.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct PlaceId(pub usize);

/// Index of a transition within its compiled net.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TransitionId(pub usize);

/// Identity of a token within one replication. Ids are assigned in creation
/// order: initial tokens first, then source emissions.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TokenId(pub u64);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Firing-delay policy of a transition for one color (or the wildcard).
#[derive(Clone, PartialEq, Debug)]
pub enum DelayPolicy {
    /// Zero delay, resolved before time advances; higher priority fires first.
    Immediate { priority: i32 },
    Fixed { delay: Time },
    Exponential { mean: Time },
    Weibull { scale: f64, shape: f64 },
    Uniform { low: Time, high: Time },
}

impl DelayPolicy {
    pub fn immediate(priority: i32) -> Self {
        DelayPolicy::Immediate { priority }
    }

    pub fn fixed(delay: Time) -> Self {
        DelayPolicy::Fixed { delay }
    }

    pub fn exponential(mean: Time) -> Self {
        DelayPolicy::Exponential { mean }
    }

    pub fn weibull(scale: f64, shape: f64) -> Self {
        DelayPolicy::Weibull { scale, shape }
    }

    pub fn uniform(low: Time, high: Time) -> Self {
        DelayPolicy::Uniform { low, high }
    }

    /// Tie-break priority; zero for everything but immediate policies.
    pub fn priority(&self) -> i32 {
        match self {
            DelayPolicy::Immediate { priority } => *priority,
            _ => 0,
        }
    }

    pub fn is_immediate(&self) -> bool {
        matches!(self, DelayPolicy::Immediate { .. })
    }
}

/// What happens to a token's age when it is fired through a transition.
#[derive(Copy, Clone, PartialEq, Debug, Default)]
pub enum AgeAction {
    #[default]
    Reset,
    Keep,
    /// Multiply the accumulated age by a factor in [0, 1].
    Scale(f64),
}

/// Compiled transition: a directed arc with at most one input and one output
/// place. A transition without an input is a source (it emits fresh tokens of
/// `emit_color`), one without an output is a sink.
#[derive(Clone, PartialEq, Debug)]
pub struct Transition {
    pub name: String,
    pub input: Option<PlaceId>,
    pub output: Option<PlaceId>,
    pub policies: BTreeMap<Color, DelayPolicy>,
    pub wildcard_policy: Option<DelayPolicy>,
    pub color_map: BTreeMap<Color, Color>,
    pub age_action: AgeAction,
    pub emit_color: Option<Color>,
}

impl Transition {
    /// The delay policy applicable to a token of the given color, if any.
    /// A token whose color has no applicable policy is invisible ("blind")
    /// to the transition.
    pub fn policy_for(&self, color: Color) -> Option<&DelayPolicy> {
        self.policies.get(&color).or(self.wildcard_policy.as_ref())
    }

    /// Output color for a token fired with the given color.
    pub fn mapped_color(&self, color: Color) -> Color {
        self.color_map.get(&color).copied().unwrap_or(color)
    }

    pub fn is_source(&self) -> bool {
        self.input.is_none()
    }

    pub fn is_sink(&self) -> bool {
        self.output.is_none()
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum TriggerKind {
    Inhibitor,
    Enabler,
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriggerKind::Inhibitor => write!(f, "inhibitor"),
            TriggerKind::Enabler => write!(f, "enabler"),
        }
    }
}

/// Inhibitor or enabler arc. An inhibitor of multiplicity `k` disables its
/// target transition while its input place holds at least `k` matching
/// tokens; an enabler disables the target unless it holds at least `k`.
#[derive(Clone, PartialEq, Debug)]
pub struct Trigger {
    pub kind: TriggerKind,
    pub place: PlaceId,
    pub target: TransitionId,
    pub multiplicity: u32,
    pub color_filter: Option<BTreeSet<Color>>,
}

impl Trigger {
    /// Whether the target may fire given the matching-token count.
    pub fn satisfied_by(&self, count: u32) -> bool {
        match self.kind {
            TriggerKind::Inhibitor => count < self.multiplicity,
            TriggerKind::Enabler => count >= self.multiplicity,
        }
    }

    pub fn matches_color(&self, color: Color) -> bool {
        match &self.color_filter {
            None => true,
            Some(filter) => filter.contains(&color),
        }
    }
}

/// One line of a net's initial marking.
#[derive(Clone, PartialEq, Debug)]
pub struct InitialToken {
    pub place: PlaceId,
    pub color: Color,
    pub age: Time,
    pub count: u32,
}

/// Threshold comparison direction for threshold sensors.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Relation {
    AtLeast,
    AtMost,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::AtLeast => write!(f, ">="),
            Relation::AtMost => write!(f, "<="),
        }
    }
}

/// What a sensor measures over its window.
#[derive(Clone, PartialEq, Debug)]
pub enum SensorKind {
    /// Time-averaged number of (matching) tokens in a place.
    TimeAverage {
        place: PlaceId,
        filter: Option<BTreeSet<Color>>,
    },
    /// Fraction of window time the token count satisfies `relation count`.
    Threshold {
        place: PlaceId,
        count: u32,
        relation: Relation,
    },
    /// Number of times the token count steps from below `count` to at least
    /// `count` within the window.
    Upcrossings { place: PlaceId, count: u32 },
    /// Number of firings of a transition within the window.
    FiringCount { transition: TransitionId },
}

/// Sensor attached to a place or transition. A sensor without an explicit
/// window uses the run's default window (second half of the horizon unless
/// overridden).
#[derive(Clone, PartialEq, Debug)]
pub struct SensorSpec {
    pub name: String,
    pub kind: SensorKind,
    pub window: Option<(Time, Time)>,
}

/// Immutable, validated net. Construct through [`NetBuilder`].
#[derive(Clone, PartialEq, Debug)]
pub struct Net {
    places: Vec<String>,
    transitions: Vec<Transition>,
    triggers: Vec<Trigger>,
    initial_tokens: Vec<InitialToken>,
    sensors: Vec<SensorSpec>,
    color_ranges: Vec<(Color, Color)>,
    triggers_by_target: Vec<Vec<usize>>,
    transitions_by_input: Vec<Vec<TransitionId>>,
    targets_watching: Vec<Vec<TransitionId>>,
    sources: Vec<TransitionId>,
}

impl Net {
    pub fn place_count(&self) -> usize {
        self.places.len()
    }

    pub fn place_name(&self, id: PlaceId) -> &str {
        &self.places[id.0]
    }

    pub fn place_id(&self, name: &str) -> Option<PlaceId> {
        self.places.iter().position(|p| p == name).map(PlaceId)
    }

    pub fn places(&self) -> impl Iterator<Item = (PlaceId, &str)> {
        self.places
            .iter()
            .enumerate()
            .map(|(i, n)| (PlaceId(i), n.as_str()))
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn transition(&self, id: TransitionId) -> &Transition {
        &self.transitions[id.0]
    }

    pub fn transition_id(&self, name: &str) -> Option<TransitionId> {
        self.transitions
            .iter()
            .position(|t| t.name == name)
            .map(TransitionId)
    }

    pub fn transitions(&self) -> impl Iterator<Item = (TransitionId, &Transition)> {
        self.transitions
            .iter()
            .enumerate()
            .map(|(i, t)| (TransitionId(i), t))
    }

    pub fn triggers(&self) -> &[Trigger] {
        &self.triggers
    }

    /// Triggers attached to the given transition.
    pub fn triggers_of(&self, id: TransitionId) -> impl Iterator<Item = &Trigger> {
        self.triggers_by_target[id.0].iter().map(|&i| &self.triggers[i])
    }

    pub fn initial_tokens(&self) -> &[InitialToken] {
        &self.initial_tokens
    }

    pub fn sensors(&self) -> &[SensorSpec] {
        &self.sensors
    }

    /// Declared color ranges (set by layer expansion). Empty means the net
    /// places no restriction on token colors.
    pub fn color_ranges(&self) -> &[(Color, Color)] {
        &self.color_ranges
    }

    pub fn color_in_ranges(&self, color: Color) -> bool {
        self.color_ranges.is_empty()
            || self.color_ranges.iter().any(|&(lo, hi)| lo <= color && color <= hi)
    }

    /// Transitions whose input is the given place.
    pub fn transitions_from(&self, place: PlaceId) -> &[TransitionId] {
        &self.transitions_by_input[place.0]
    }

    /// Transitions whose enabling depends on the given place through a trigger.
    pub fn transitions_watching(&self, place: PlaceId) -> &[TransitionId] {
        &self.targets_watching[place.0]
    }

    /// Source transitions (no input place).
    pub fn sources(&self) -> &[TransitionId] {
        &self.sources
    }
}

/// A violated net invariant: the offending element and the broken rule.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Violation {
    pub element: String,
    pub rule: String,
}

impl Violation {
    fn new(element: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            element: element.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.rule)
    }
}

/// Policy key as written in a definition: an explicit color or the wildcard.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum PolicyKey {
    Wildcard,
    Color(i64),
}

/// Transition under construction. Colors are signed so that invalid input
/// (negative colors) can be represented and reported by validation.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct TransitionDef {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub policies: Vec<(PolicyKey, DelayPolicy)>,
    pub color_map: Vec<(i64, i64)>,
    pub age_action: AgeAction,
    pub emit_color: Option<i64>,
}

impl TransitionDef {
    pub fn from(&mut self, place: &str) -> &mut Self {
        self.inputs.push(place.to_string());
        self
    }

    pub fn to(&mut self, place: &str) -> &mut Self {
        self.outputs.push(place.to_string());
        self
    }

    pub fn policy(&mut self, color: i64, policy: DelayPolicy) -> &mut Self {
        self.policies.push((PolicyKey::Color(color), policy));
        self
    }

    pub fn wildcard(&mut self, policy: DelayPolicy) -> &mut Self {
        self.policies.push((PolicyKey::Wildcard, policy));
        self
    }

    pub fn map_color(&mut self, from: i64, to: i64) -> &mut Self {
        self.color_map.push((from, to));
        self
    }

    pub fn age(&mut self, action: AgeAction) -> &mut Self {
        self.age_action = action;
        self
    }

    pub fn emit(&mut self, color: i64) -> &mut Self {
        self.emit_color = Some(color);
        self
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct TriggerDef {
    pub kind: TriggerKind,
    pub place: String,
    pub target: String,
    pub multiplicity: u32,
    pub colors: Vec<i64>,
}

impl TriggerDef {
    pub fn multiplicity(&mut self, k: u32) -> &mut Self {
        self.multiplicity = k;
        self
    }

    pub fn colors<I: IntoIterator<Item = i64>>(&mut self, colors: I) -> &mut Self {
        self.colors.extend(colors);
        self
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct TokenDef {
    pub place: String,
    pub color: i64,
    pub age: Time,
    pub count: u32,
}

#[derive(Clone, PartialEq, Debug)]
pub struct SensorDefKind {
    pub kind_name: String,
    pub place_or_transition: String,
    pub count: u32,
    pub relation: Relation,
}

#[derive(Clone, PartialEq, Debug)]
pub struct SensorDef {
    pub name: String,
    pub kind: SensorDefKind,
    pub filter: Vec<i64>,
    pub window: Option<(Time, Time)>,
}

impl SensorDef {
    pub fn window(&mut self, t1: Time, t2: Time) -> &mut Self {
        self.window = Some((t1, t2));
        self
    }

    pub fn filter<I: IntoIterator<Item = i64>>(&mut self, colors: I) -> &mut Self {
        self.filter.extend(colors);
        self
    }
}

/// Mutable net definition. Everything is referenced by name; nothing is
/// checked until [`NetBuilder::validate`] / [`NetBuilder::finish`].
#[derive(Clone, PartialEq, Debug, Default)]
pub struct NetBuilder {
    pub places: Vec<String>,
    pub transitions: Vec<TransitionDef>,
    pub triggers: Vec<TriggerDef>,
    pub tokens: Vec<TokenDef>,
    pub sensors: Vec<SensorDef>,
    pub color_ranges: Vec<(i64, i64)>,
}

impl NetBuilder {
    pub fn new() -> Self {
        NetBuilder::default()
    }

    pub fn place(&mut self, name: &str) -> &mut Self {
        self.places.push(name.to_string());
        self
    }

    pub fn transition(&mut self, name: &str) -> &mut TransitionDef {
        self.transitions.push(TransitionDef {
            name: name.to_string(),
            ..TransitionDef::default()
        });
        self.transitions.last_mut().unwrap()
    }

    pub fn trigger(&mut self, kind: TriggerKind, place: &str, target: &str) -> &mut TriggerDef {
        self.triggers.push(TriggerDef {
            kind,
            place: place.to_string(),
            target: target.to_string(),
            multiplicity: 1,
            colors: Vec::new(),
        });
        self.triggers.last_mut().unwrap()
    }

    pub fn inhibitor(&mut self, place: &str, target: &str) -> &mut TriggerDef {
        self.trigger(TriggerKind::Inhibitor, place, target)
    }

    pub fn enabler(&mut self, place: &str, target: &str) -> &mut TriggerDef {
        self.trigger(TriggerKind::Enabler, place, target)
    }

    pub fn tokens(&mut self, place: &str, color: i64, age: Time, count: u32) -> &mut Self {
        self.tokens.push(TokenDef {
            place: place.to_string(),
            color,
            age,
            count,
        });
        self
    }

    pub fn token(&mut self, place: &str, color: i64) -> &mut Self {
        self.tokens(place, color, 0.0, 1)
    }

    fn sensor(&mut self, name: &str, kind: SensorDefKind) -> &mut SensorDef {
        self.sensors.push(SensorDef {
            name: name.to_string(),
            kind,
            filter: Vec::new(),
            window: None,
        });
        self.sensors.last_mut().unwrap()
    }

    pub fn sensor_time_average(&mut self, name: &str, place: &str) -> &mut SensorDef {
        self.sensor(
            name,
            SensorDefKind {
                kind_name: "time_average".to_string(),
                place_or_transition: place.to_string(),
                count: 0,
                relation: Relation::AtLeast,
            },
        )
    }

    pub fn sensor_threshold(
        &mut self,
        name: &str,
        place: &str,
        relation: Relation,
        count: u32,
    ) -> &mut SensorDef {
        self.sensor(
            name,
            SensorDefKind {
                kind_name: "threshold".to_string(),
                place_or_transition: place.to_string(),
                count,
                relation,
            },
        )
    }

    pub fn sensor_upcrossings(&mut self, name: &str, place: &str, count: u32) -> &mut SensorDef {
        self.sensor(
            name,
            SensorDefKind {
                kind_name: "upcrossings".to_string(),
                place_or_transition: place.to_string(),
                count,
                relation: Relation::AtLeast,
            },
        )
    }

    pub fn sensor_firing_count(&mut self, name: &str, transition: &str) -> &mut SensorDef {
        self.sensor(
            name,
            SensorDefKind {
                kind_name: "firing_count".to_string(),
                place_or_transition: transition.to_string(),
                count: 0,
                relation: Relation::AtLeast,
            },
        )
    }

    /// Check every structural invariant and report all violations.
    /// Validation is side-effect free; violations are data, not failures.
    pub fn validate(&self) -> Vec<Violation> {
        self.validate_with_places(&BTreeSet::new())
    }

    /// Validation against an extended place universe; used for layer
    /// templates, which may reference places shared with the base net.
    pub(crate) fn validate_with_places(&self, extra_places: &BTreeSet<String>) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen_places = BTreeSet::new();
        for p in &self.places {
            if !seen_places.insert(p.clone()) {
                out.push(Violation::new(p.clone(), "duplicate place id"));
            }
        }
        let known_place =
            |name: &str| seen_places.contains(name) || extra_places.contains(name);

        let mut seen_transitions = BTreeSet::new();
        for t in &self.transitions {
            let el = format!("transition {}", t.name);
            if !seen_transitions.insert(t.name.clone()) {
                out.push(Violation::new(el.clone(), "duplicate transition id"));
            }
            if t.inputs.len() > 1 {
                out.push(Violation::new(el.clone(), "multiple inputs"));
            }
            if t.outputs.len() > 1 {
                out.push(Violation::new(el.clone(), "multiple outputs"));
            }
            if t.inputs.is_empty() && t.outputs.is_empty() {
                out.push(Violation::new(el.clone(), "needs an input or an output place"));
            }
            for p in t.inputs.iter().chain(t.outputs.iter()) {
                if !known_place(p) {
                    out.push(Violation::new(el.clone(), format!("references undeclared place {p}")));
                }
            }
            let mut policy_colors = BTreeSet::new();
            let mut has_wildcard = false;
            for (key, policy) in &t.policies {
                match key {
                    PolicyKey::Wildcard => {
                        if has_wildcard {
                            out.push(Violation::new(el.clone(), "duplicate wildcard policy"));
                        }
                        has_wildcard = true;
                    }
                    PolicyKey::Color(c) => {
                        if *c < 0 {
                            out.push(Violation::new(el.clone(), format!("negative color {c}")));
                        } else if !policy_colors.insert(*c) {
                            out.push(Violation::new(
                                el.clone(),
                                format!("duplicate policy for color {c}"),
                            ));
                        }
                    }
                }
                out.extend(validate_policy(&el, policy));
            }
            if t.policies.is_empty() {
                out.push(Violation::new(el.clone(), "declares no delay policy"));
            }
            for &(from, to) in &t.color_map {
                if from < 0 || to < 0 {
                    out.push(Violation::new(
                        el.clone(),
                        format!("negative color in map {from} -> {to}"),
                    ));
                    continue;
                }
                if !has_wildcard && !policy_colors.contains(&from) {
                    out.push(Violation::new(
                        el.clone(),
                        format!("color map key {from} has no applicable policy"),
                    ));
                }
            }
            let mut map_keys = BTreeSet::new();
            for &(from, _) in &t.color_map {
                if from >= 0 && !map_keys.insert(from) {
                    out.push(Violation::new(
                        el.clone(),
                        format!("duplicate color map entry for {from}"),
                    ));
                }
            }
            if let AgeAction::Scale(alpha) = t.age_action {
                if !(0.0..=1.0).contains(&alpha) {
                    out.push(Violation::new(el.clone(), "age scale factor outside [0, 1]"));
                }
            }
            match t.emit_color {
                Some(c) if c < 0 => {
                    out.push(Violation::new(el.clone(), format!("negative emit color {c}")))
                }
                Some(_) if !t.inputs.is_empty() => out.push(Violation::new(
                    el.clone(),
                    "emit color is only meaningful on a source transition",
                )),
                None if t.inputs.is_empty() => out.push(Violation::new(
                    el.clone(),
                    "source transition must declare an emit color",
                )),
                _ => {}
            }
        }

        let transition_names: BTreeSet<&str> =
            self.transitions.iter().map(|t| t.name.as_str()).collect();
        for g in &self.triggers {
            let el = format!("{} {} -> {}", g.kind, g.place, g.target);
            if g.multiplicity < 1 {
                out.push(Violation::new(el.clone(), "multiplicity must be at least 1"));
            }
            if !known_place(&g.place) {
                out.push(Violation::new(
                    el.clone(),
                    format!("references undeclared place {}", g.place),
                ));
            }
            if !transition_names.contains(g.target.as_str()) {
                out.push(Violation::new(
                    el.clone(),
                    format!("targets undeclared transition {}", g.target),
                ));
            }
            for &c in &g.colors {
                if c < 0 {
                    out.push(Violation::new(el.clone(), format!("negative color {c} in filter")));
                }
            }
        }

        for tok in &self.tokens {
            let el = format!("tokens at {}", tok.place);
            if !known_place(&tok.place) {
                out.push(Violation::new(
                    el.clone(),
                    format!("references undeclared place {}", tok.place),
                ));
            }
            if tok.color < 0 {
                out.push(Violation::new(el.clone(), format!("negative color {}", tok.color)));
            }
            if !(tok.age >= 0.0) || !tok.age.is_finite() {
                out.push(Violation::new(el.clone(), "token age must be finite and non-negative"));
            }
        }

        let mut seen_sensors = BTreeSet::new();
        for s in &self.sensors {
            let el = format!("sensor {}", s.name);
            if !seen_sensors.insert(s.name.clone()) {
                out.push(Violation::new(el.clone(), "duplicate sensor id"));
            }
            match s.kind.kind_name.as_str() {
                "time_average" | "threshold" | "upcrossings" => {
                    if !known_place(&s.kind.place_or_transition) {
                        out.push(Violation::new(
                            el.clone(),
                            format!("references undeclared place {}", s.kind.place_or_transition),
                        ));
                    }
                    if s.kind.kind_name == "upcrossings" && s.kind.count < 1 {
                        out.push(Violation::new(el.clone(), "upcrossing threshold must be at least 1"));
                    }
                }
                "firing_count" => {
                    if !transition_names.contains(s.kind.place_or_transition.as_str()) {
                        out.push(Violation::new(
                            el.clone(),
                            format!(
                                "references undeclared transition {}",
                                s.kind.place_or_transition
                            ),
                        ));
                    }
                }
                other => out.push(Violation::new(el.clone(), format!("unknown sensor kind {other}"))),
            }
            for &c in &s.filter {
                if c < 0 {
                    out.push(Violation::new(el.clone(), format!("negative color {c} in filter")));
                }
            }
            if let Some((t1, t2)) = s.window {
                if !(t1 >= 0.0 && t2 > t1 && t1.is_finite() && t2.is_finite()) {
                    out.push(Violation::new(el.clone(), "window must satisfy 0 <= t1 < t2"));
                }
            }
        }

        for &(lo, hi) in &self.color_ranges {
            if lo < 0 || hi < lo {
                out.push(Violation::new(
                    "ranges".to_string(),
                    format!("invalid color range {lo}..{hi}"),
                ));
            }
        }

        out
    }

    /// Validate and compile into an immutable [`Net`]. The compiled net is
    /// canonical: places, transitions and sensors sorted by name, tokens by
    /// (place, color, age), identical token lines merged.
    pub fn finish(&self) -> Result<Net, Vec<Violation>> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(violations);
        }

        let mut places = self.places.clone();
        places.sort();
        let place_id = |name: &str| PlaceId(places.iter().position(|p| p == name).unwrap());

        let mut tdefs: Vec<&TransitionDef> = self.transitions.iter().collect();
        tdefs.sort_by(|a, b| a.name.cmp(&b.name));
        let transition_id =
            |name: &str| TransitionId(tdefs.iter().position(|t| t.name == name).unwrap());

        let transitions: Vec<Transition> = tdefs
            .iter()
            .map(|t| {
                let mut policies = BTreeMap::new();
                let mut wildcard_policy = None;
                for (key, policy) in &t.policies {
                    match key {
                        PolicyKey::Wildcard => wildcard_policy = Some(policy.clone()),
                        PolicyKey::Color(c) => {
                            policies.insert(Color(*c as u32), policy.clone());
                        }
                    }
                }
                Transition {
                    name: t.name.clone(),
                    input: t.inputs.first().map(|p| place_id(p)),
                    output: t.outputs.first().map(|p| place_id(p)),
                    policies,
                    wildcard_policy,
                    color_map: t
                        .color_map
                        .iter()
                        .map(|&(a, b)| (Color(a as u32), Color(b as u32)))
                        .collect(),
                    age_action: t.age_action,
                    emit_color: t.emit_color.map(|c| Color(c as u32)),
                }
            })
            .collect();

        let mut triggers: Vec<Trigger> = self
            .triggers
            .iter()
            .map(|g| Trigger {
                kind: g.kind,
                place: place_id(&g.place),
                target: transition_id(&g.target),
                multiplicity: g.multiplicity,
                color_filter: if g.colors.is_empty() {
                    None
                } else {
                    Some(g.colors.iter().map(|&c| Color(c as u32)).collect())
                },
            })
            .collect();
        triggers.sort_by_key(|g| {
            (
                g.target,
                g.place,
                matches!(g.kind, TriggerKind::Enabler),
                g.multiplicity,
            )
        });

        let mut initial_tokens: Vec<InitialToken> = self
            .tokens
            .iter()
            .map(|t| InitialToken {
                place: place_id(&t.place),
                color: Color(t.color as u32),
                age: t.age,
                count: t.count,
            })
            .collect();
        initial_tokens.sort_by(|a, b| {
            (a.place, a.color)
                .cmp(&(b.place, b.color))
                .then(a.age.total_cmp(&b.age))
        });
        initial_tokens.dedup_by(|next, prev| {
            if next.place == prev.place && next.color == prev.color && next.age == prev.age {
                prev.count += next.count;
                true
            } else {
                false
            }
        });
        initial_tokens.retain(|t| t.count > 0);

        let mut sensors: Vec<SensorSpec> = self
            .sensors
            .iter()
            .map(|s| {
                let filter = if s.filter.is_empty() {
                    None
                } else {
                    Some(s.filter.iter().map(|&c| Color(c as u32)).collect())
                };
                let kind = match s.kind.kind_name.as_str() {
                    "time_average" => SensorKind::TimeAverage {
                        place: place_id(&s.kind.place_or_transition),
                        filter,
                    },
                    "threshold" => SensorKind::Threshold {
                        place: place_id(&s.kind.place_or_transition),
                        count: s.kind.count,
                        relation: s.kind.relation,
                    },
                    "upcrossings" => SensorKind::Upcrossings {
                        place: place_id(&s.kind.place_or_transition),
                        count: s.kind.count,
                    },
                    "firing_count" => SensorKind::FiringCount {
                        transition: transition_id(&s.kind.place_or_transition),
                    },
                    _ => unreachable!("validated sensor kind"),
                };
                SensorSpec {
                    name: s.name.clone(),
                    kind,
                    window: s.window,
                }
            })
            .collect();
        sensors.sort_by(|a, b| a.name.cmp(&b.name));

        let mut color_ranges: Vec<(Color, Color)> = self
            .color_ranges
            .iter()
            .map(|&(lo, hi)| (Color(lo as u32), Color(hi as u32)))
            .collect();
        color_ranges.sort();
        color_ranges.dedup();

        let mut triggers_by_target = alloc::vec![Vec::new(); transitions.len()];
        for (i, g) in triggers.iter().enumerate() {
            triggers_by_target[g.target.0].push(i);
        }
        let mut transitions_by_input = alloc::vec![Vec::new(); places.len()];
        let mut sources = Vec::new();
        for (i, t) in transitions.iter().enumerate() {
            match t.input {
                Some(p) => transitions_by_input[p.0].push(TransitionId(i)),
                None => sources.push(TransitionId(i)),
            }
        }
        let mut targets_watching: Vec<Vec<TransitionId>> = alloc::vec![Vec::new(); places.len()];
        for g in &triggers {
            let watchers = &mut targets_watching[g.place.0];
            if !watchers.contains(&g.target) {
                watchers.push(g.target);
            }
        }
        for w in &mut targets_watching {
            w.sort();
        }

        Ok(Net {
            places,
            transitions,
            triggers,
            initial_tokens,
            sensors,
            color_ranges,
            triggers_by_target,
            transitions_by_input,
            targets_watching,
            sources,
        })
    }
}

fn validate_policy(element: &str, policy: &DelayPolicy) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |msg: String| out.push(Violation::new(element.to_string(), msg));
    match policy {
        DelayPolicy::Immediate { .. } => {}
        DelayPolicy::Fixed { delay } => {
            if !(delay.is_finite() && *delay >= 0.0) {
                bad(format!("fixed delay {delay} must be finite and non-negative"));
            }
        }
        DelayPolicy::Exponential { mean } => {
            if !(mean.is_finite() && *mean > 0.0) {
                bad(format!("exponential mean {mean} must be positive"));
            }
        }
        DelayPolicy::Weibull { scale, shape } => {
            if !(scale.is_finite() && *scale > 0.0) {
                bad(format!("weibull scale {scale} must be positive"));
            }
            if !(shape.is_finite() && *shape > 0.0) {
                bad(format!("weibull shape {shape} must be positive"));
            }
        }
        DelayPolicy::Uniform { low, high } => {
            if !(low.is_finite() && high.is_finite() && *low >= 0.0 && *high >= *low) {
                bad(format!("uniform bounds [{low}, {high}] must satisfy 0 <= low <= high"));
            }
        }
    }
    out
}
