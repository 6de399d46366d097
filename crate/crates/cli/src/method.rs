use std::fmt;

/// Methods compared by the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Static,
    Temporal,
    Dynamic,
    Unconditional,
    Conditional,
    ClassifierGuided,
    DistributionGuided,
    Finetune,
}

/// Trained artifacts; several methods adapt the same one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    StaticBasis,
    TemporalBasis,
    DynamicBasis,
    Unconditional,
    Conditional,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Static,
        Method::Temporal,
        Method::Dynamic,
        Method::Unconditional,
        Method::Conditional,
        Method::ClassifierGuided,
        Method::DistributionGuided,
        Method::Finetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Static => "static",
            Method::Temporal => "temporal",
            Method::Dynamic => "dynamic",
            Method::Unconditional => "unconditional",
            Method::Conditional => "conditional",
            Method::ClassifierGuided => "classifier-guided",
            Method::DistributionGuided => "distribution-guided",
            Method::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn model_kind(self) -> ModelKind {
        match self {
            Method::Static => ModelKind::StaticBasis,
            Method::Temporal => ModelKind::TemporalBasis,
            Method::Dynamic => ModelKind::DynamicBasis,
            Method::Conditional => ModelKind::Conditional,
            Method::Unconditional | Method::ClassifierGuided | Method::DistributionGuided | Method::Finetune => {
                ModelKind::Unconditional
            }
        }
    }

    /// Whether generation needs samples from the target.
    pub fn needs_shots(self) -> bool {
        !matches!(self, Method::Unconditional | Method::Conditional)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::StaticBasis,
        ModelKind::TemporalBasis,
        ModelKind::DynamicBasis,
        ModelKind::Unconditional,
        ModelKind::Conditional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::StaticBasis => "static-basis",
            ModelKind::TemporalBasis => "temporal-basis",
            ModelKind::DynamicBasis => "dynamic-basis",
            ModelKind::Unconditional => "unconditional",
            ModelKind::Conditional => "conditional",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// The method a checkpoint of this kind generates with when none is requested.
    pub fn default_method(self) -> Method {
        match self {
            ModelKind::StaticBasis => Method::Static,
            ModelKind::TemporalBasis => Method::Temporal,
            ModelKind::DynamicBasis => Method::Dynamic,
            ModelKind::Unconditional => Method::Unconditional,
            ModelKind::Conditional => Method::Conditional,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
