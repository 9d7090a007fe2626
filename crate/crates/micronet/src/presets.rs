//! The default micro benchmark: three target tasks and five sources at
//! varying distance from them.

use std::f64::consts::PI;

use crate::dataset::{Blob, ClassSpec, GeneratorSpec, Texture};
use crate::zoo::SourceSpec;

const GRAY: [f64; 3] = [1.0, 1.0, 1.0];

fn texture(orientation: f64, frequency: f64, amplitude: f64, color: [f64; 3]) -> ClassSpec {
    ClassSpec {
        texture: Some(Texture {
            orientation,
            frequency,
            amplitude,
            color,
        }),
        blob: None,
    }
}

fn blob(center: [f64; 2], radius: f64, amplitude: f64, color: [f64; 3]) -> ClassSpec {
    ClassSpec {
        texture: None,
        blob: Some(Blob {
            center,
            radius,
            amplitude,
            color,
        }),
    }
}

pub fn targets() -> Vec<GeneratorSpec> {
    vec![
        GeneratorSpec {
            name: "fine-texture".into(),
            classes: (0..3)
                .map(|k| texture(k as f64 * PI / 3.0, 7.0, 0.2, GRAY))
                .collect(),
            noise: 0.6,
            jitter: 0.6,
        },
        GeneratorSpec {
            name: "lesion-position".into(),
            classes: [[0.3, 0.3], [0.7, 0.3], [0.5, 0.7]]
                .into_iter()
                .map(|c| blob(c, 0.15, 0.9, GRAY))
                .collect(),
            noise: 0.6,
            jitter: 0.6,
        },
        GeneratorSpec {
            name: "stain-color".into(),
            classes: [[1.0, 0.2, 0.2], [0.2, 0.2, 1.0], [0.6, 0.2, 0.8]]
                .into_iter()
                .map(|c| blob([0.5, 0.5], 0.3, 0.25, c))
                .collect(),
            noise: 0.6,
            jitter: 0.6,
        },
    ]
}

pub fn sources() -> Vec<SourceSpec> {
    vec![
        SourceSpec {
            id: "near-texture".into(),
            generator: Some(GeneratorSpec {
                name: "oriented-gratings".into(),
                classes: (0..4)
                    .map(|k| texture(k as f64 * PI / 4.0, 7.0, 0.8, GRAY))
                    .collect(),
                noise: 0.3,
                jitter: 0.5,
            }),
        },
        SourceSpec {
            id: "coarse-texture".into(),
            generator: Some(GeneratorSpec {
                name: "coarse-gratings".into(),
                classes: (0..4)
                    .map(|k| texture(k as f64 * PI / 4.0, 1.5, 0.8, GRAY))
                    .collect(),
                noise: 0.3,
                jitter: 0.5,
            }),
        },
        SourceSpec {
            id: "shapes".into(),
            generator: Some(GeneratorSpec {
                name: "blob-positions".into(),
                classes: [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]
                    .into_iter()
                    .map(|c| blob(c, 0.15, 1.0, GRAY))
                    .collect(),
                noise: 0.3,
                jitter: 0.5,
            }),
        },
        SourceSpec {
            id: "colors".into(),
            generator: Some(GeneratorSpec {
                name: "color-fields".into(),
                classes: [
                    [1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 1.0],
                    [1.0, 1.0, 0.0],
                ]
                .into_iter()
                .map(|c| blob([0.5, 0.5], 0.35, 0.8, c))
                .collect(),
                noise: 0.3,
                jitter: 0.5,
            }),
        },
        SourceSpec {
            id: "random-init".into(),
            generator: None,
        },
    ]
}
