use super::DataError;

/// A material with its keyword labels and the physical constants that drive
/// the synthetic sensor model.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialClass {
    pub class_id: usize,
    pub keywords: Vec<String>,
    /// Peak contact pressure, in `[0, 1]`.
    pub hardness: f64,
    /// Surface texture, cycles per frame width.
    pub texture_frequency: f64,
    /// Viscoelastic creep constant, in frames.
    pub relaxation_time: f64,
    /// RGB tint of the material as seen by the camera.
    pub tint: [f64; 3],
}

const HARD: f64 = 0.85;
const SOFT: f64 = 0.35;
const SMOOTH: f64 = 1.0;
const ROUGH: f64 = 3.0;
const ELASTIC: f64 = 0.3;
const VISCOUS: f64 = 3.0;

/// Keyword vocabulary in index order.
const VOCABULARY: [&str; 8] = ["hard", "soft", "smooth", "rough", "elastic", "viscous", "matte", "glossy"];

// (hardness, texture, relaxation, finish, tint). Rows 0/2 and 1/3 differ only in
// relaxation time and share a tint; rows 4/5 differ only in tint and finish.
type MaterialRow = (f64, f64, f64, Option<&'static str>, [f64; 3]);

#[rustfmt::skip]
const TABLE: [MaterialRow; 16] = [
    (HARD, SMOOTH, ELASTIC, None,           [0.80, 0.30, 0.25]),
    (SOFT, ROUGH,  VISCOUS, None,           [0.25, 0.40, 0.85]),
    (HARD, SMOOTH, VISCOUS, None,           [0.80, 0.30, 0.25]),
    (SOFT, ROUGH,  ELASTIC, None,           [0.25, 0.40, 0.85]),
    (HARD, ROUGH,  ELASTIC, Some("matte"),  [0.30, 0.75, 0.30]),
    (HARD, ROUGH,  ELASTIC, Some("glossy"), [0.85, 0.80, 0.20]),
    (SOFT, SMOOTH, ELASTIC, None,           [0.65, 0.30, 0.80]),
    (SOFT, SMOOTH, VISCOUS, None,           [0.25, 0.80, 0.80]),
    (HARD, ROUGH,  VISCOUS, None,           [0.55, 0.55, 0.55]),
    (SOFT, ROUGH,  ELASTIC, Some("glossy"), [0.90, 0.55, 0.20]),
    (HARD, SMOOTH, ELASTIC, Some("glossy"), [0.45, 0.20, 0.60]),
    (SOFT, SMOOTH, VISCOUS, Some("matte"),  [0.20, 0.55, 0.40]),
    (HARD, SMOOTH, VISCOUS, Some("matte"),  [0.70, 0.60, 0.45]),
    (SOFT, ROUGH,  VISCOUS, Some("glossy"), [0.35, 0.25, 0.30]),
    (HARD, ROUGH,  VISCOUS, Some("glossy"), [0.90, 0.90, 0.90]),
    (SOFT, SMOOTH, ELASTIC, Some("glossy"), [0.15, 0.15, 0.50]),
];

/// The set of material classes used to generate a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialCatalog {
    classes: Vec<MaterialClass>,
}

impl MaterialCatalog {
    /// The first `k` entries of the built-in material table (`2 <= k <= 16`).
    ///
    /// Classes 0 and 1 share no keyword. For `k >= 3`, classes 0 and 2 form the
    /// temporal-only pair: same hardness, texture and tint, different relaxation.
    pub fn standard(k: usize) -> Result<Self, DataError> {
        if !(2..=TABLE.len()).contains(&k) {
            return Err(DataError::InvalidArgument(format!("class count {k} outside 2..={}", TABLE.len())));
        }
        let classes = TABLE[..k]
            .iter()
            .enumerate()
            .map(|(class_id, &(hardness, texture_frequency, relaxation_time, finish, tint))| {
                let mut keywords = vec![
                    if hardness == HARD { "hard" } else { "soft" },
                    if texture_frequency == SMOOTH { "smooth" } else { "rough" },
                    if relaxation_time == ELASTIC { "elastic" } else { "viscous" },
                ];
                keywords.extend(finish);
                MaterialClass {
                    class_id,
                    keywords: keywords.into_iter().map(String::from).collect(),
                    hardness,
                    texture_frequency,
                    relaxation_time,
                    tint,
                }
            })
            .collect();
        Self::from_classes(classes)
    }

    /// Validates ids (`0..k` in order) and keyword membership in the vocabulary.
    pub fn from_classes(classes: Vec<MaterialClass>) -> Result<Self, DataError> {
        for (i, c) in classes.iter().enumerate() {
            if c.class_id != i {
                return Err(DataError::InvalidArgument(format!("class {i} has id {}", c.class_id)));
            }
            if c.keywords.is_empty() {
                return Err(DataError::InvalidArgument(format!("class {i} has no keywords")));
            }
            if let Some(w) = c.keywords.iter().find(|w| !VOCABULARY.contains(&w.as_str())) {
                return Err(DataError::InvalidArgument(format!("class {i}: unknown keyword {w}")));
            }
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[MaterialClass] {
        &self.classes
    }

    pub fn get(&self, class_id: usize) -> Option<&MaterialClass> {
        self.classes.get(class_id)
    }

    /// The global keyword vocabulary; index is the keyword id.
    pub fn vocabulary() -> Vec<String> {
        VOCABULARY.iter().map(|s| s.to_string()).collect()
    }

    /// First class pair that differs only in relaxation time.
    pub fn temporal_pair(&self) -> Option<(usize, usize)> {
        let cs = &self.classes;
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                let (a, b) = (&cs[i], &cs[j]);
                if a.hardness == b.hardness
                    && a.texture_frequency == b.texture_frequency
                    && a.tint == b.tint
                    && a.relaxation_time != b.relaxation_time
                {
                    return Some((i, j));
                }
            }
        }
        None
    }
}
