//! Published full-scale numbers, quoted verbatim for labelled comparison in
//! reports and plots. They are references, never computed here.

/// One published row: disc Dice, disc ASSD, cup Dice, cup ASSD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedRow {
    pub method: &'static str,
    pub source_free: bool,
    pub disc_dice: f64,
    pub disc_assd: f64,
    pub cup_dice: f64,
    pub cup_assd: f64,
}

const fn row(method: &'static str, source_free: bool, v: [f64; 4]) -> PublishedRow {
    PublishedRow {
        method,
        source_free,
        disc_dice: v[0],
        disc_assd: v[1],
        cup_dice: v[2],
        cup_assd: v[3],
    }
}

pub const DRISHTI_GS: &[PublishedRow] = &[
    row("Source only", false, [94.04, 7.47, 80.22, 13.47]),
    row("Target only", false, [97.40, 3.58, 90.10, 9.50]),
    row("BEAL", false, [96.12, 4.48, 85.18, 9.66]),
    row("DPL", true, [96.39, 4.08, 83.53, 11.39]),
    row("CPR", true, [96.36, 4.09, 83.81, 10.96]),
    row("PLPB", true, [96.51, 4.01, 83.56, 11.11]),
    row("SBIF", true, [96.59, 3.92, 84.47, 10.21]),
    row("Ours", true, [96.77, 3.64, 87.34, 8.25]),
];

pub const RIM_ONE_R3: &[PublishedRow] = &[
    row("Source only", false, [83.02, 23.36, 73.10, 13.87]),
    row("Target only", false, [95.74, 6.05, 83.97, 5.38]),
    row("BEAL", false, [90.28, 8.95, 76.06, 7.19]),
    row("DPL", true, [90.13, 9.43, 79.78, 9.01]),
    row("CPR", true, [92.39, 6.86, 75.04, 10.43]),
    row("PLPB", true, [92.89, 6.52, 77.94, 10.07]),
    row("SBIF", true, [93.81, 5.58, 82.26, 7.79]),
    row("Ours", true, [95.14, 4.25, 83.53, 6.70]),
];

/// Mean Dice by unreliable-set ratio: (σ, Drishti-GS, RIM-ONE-r3).
pub const SIGMA_SWEEP: &[(f64, f64, f64)] = &[
    (0.01, 90.98, 88.15),
    (0.05, 91.62, 88.59),
    (0.10, 91.88, 89.08),
    (0.15, 91.78, 88.95),
    (0.25, 91.41, 88.73),
];

/// Component ablation: (row, Drishti Dice, Drishti ASSD, RIM Dice, RIM ASSD).
pub const COMPONENTS: &[(&str, f64, f64, f64, f64)] = &[
    ("Baseline", 90.71, 7.08, 88.47, 6.22),
    ("+ DPM", 90.65, 7.13, 88.36, 5.72),
    ("+ Reliable set", 90.74, 6.99, 88.43, 6.18),
    ("+ Reliable set + DPM", 91.36, 6.52, 88.96, 5.65),
    ("Full modules", 92.06, 5.95, 89.34, 5.48),
];

pub fn benchmark(name: &str) -> Option<&'static [PublishedRow]> {
    match name.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "drishti" | "drishtigs" => Some(DRISHTI_GS),
        "rimone" | "rimoner3" => Some(RIM_ONE_R3),
        _ => None,
    }
}
