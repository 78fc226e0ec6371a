//! Named experiment presets. A preset is a list of config keys applied
//! before the file's own keys; anything can be overridden.

type Pairs = &'static [(&'static str, &'static str)];

/// Table entries: (name, keys).
const PRESETS: &[(&str, Pairs)] = &[
    // --- training -----------------------------------------------------
    (
        "train-mix2d",
        &[
            ("experiment", "train"),
            ("dataset.kind", "gauss-mix-2d"),
            ("dataset.n", "4096"),
            ("model.hidden", "64,64"),
            ("model.conditional", "true"),
            ("train.steps", "1500"),
            ("train.batch", "128"),
            ("train.lr", "0.002"),
            ("train.reflow-rounds", "1"),
            ("train.reflow-pairs", "2048"),
            ("train.reflow-steps", "1200"),
        ],
    ),
    (
        "train-shapes",
        &[
            ("experiment", "train"),
            ("dataset.kind", "shapes-16x16"),
            ("dataset.n", "2048"),
            ("model.hidden", "256,256"),
            ("model.conditional", "true"),
            ("train.steps", "2500"),
            ("train.batch", "128"),
            ("train.lr", "0.002"),
            ("train.reflow-rounds", "1"),
            ("train.reflow-pairs", "768"),
            ("train.reflow-steps", "1000"),
            ("train.sample-steps", "40"),
        ],
    ),
    (
        "train-classifier-mix2d",
        &[
            ("experiment", "train"),
            ("train.target", "classifier"),
            ("dataset.kind", "gauss-mix-2d"),
            ("dataset.n", "4000"),
            ("classifier.hidden", "64"),
            ("classifier.steps", "400"),
            ("train.save", "classifier.fsc"),
        ],
    ),
    (
        "train-classifier-shapes",
        &[
            ("experiment", "train"),
            ("train.target", "classifier"),
            ("dataset.kind", "shapes-16x16"),
            ("dataset.n", "2000"),
            ("classifier.hidden", "64"),
            ("classifier.steps", "600"),
            ("train.save", "classifier.fsc"),
        ],
    ),
    // --- sampling -----------------------------------------------------
    (
        "sample-smoke",
        &[
            ("experiment", "sample"),
            ("model.init", "zero"),
            ("dataset.kind", "shapes-16x16"),
            ("sample.count", "4"),
            ("steer.nfe", "10"),
        ],
    ),
    // --- inverse problems ----------------------------------------------
    // Published pixel-space recipe: NFEs 200, one optimization per
    // iteration, guidance scale 500, MSE cost, lr 1 (SGD). Tuned for
    // 64x64x3 pixel models; at 16x16 it overdrives (kept verbatim for
    // fidelity, see shapes-* presets for the desk-scale recipes).
    (
        "pixel-inverse",
        &[
            ("experiment", "invert"),
            ("invert.task", "box-inpaint"),
            ("dataset.kind", "shapes-16x16"),
            ("steer.mode", "flowchef"),
            ("steer.nfe", "200"),
            ("steer.inner", "1"),
            ("steer.scale", "500"),
            ("steer.lr", "1.0"),
            ("steer.optimizer", "sgd"),
        ],
    ),
    // Published latent-space recipe: NFEs 100, Adam, lr 0.02, scale 0.5.
    (
        "latent-inverse",
        &[
            ("experiment", "invert"),
            ("invert.task", "box-inpaint"),
            ("dataset.kind", "shapes-16x16"),
            ("steer.mode", "flowchef"),
            ("steer.nfe", "100"),
            ("steer.inner", "1"),
            ("steer.scale", "0.5"),
            ("steer.lr", "0.02"),
            ("steer.optimizer", "adam"),
        ],
    ),
    (
        "shapes-inpaint",
        &[
            ("experiment", "invert"),
            ("invert.task", "box-inpaint"),
            ("dataset.kind", "shapes-16x16"),
            ("degrade.box-size", "6"),
            ("steer.mode", "flowchef"),
            ("steer.nfe", "200"),
            ("steer.inner", "1"),
            ("steer.scale", "12"),
            ("steer.lr", "1.0"),
            ("steer.optimizer", "sgd"),
        ],
    ),
    (
        "shapes-deblur",
        &[
            ("experiment", "invert"),
            ("invert.task", "deblur"),
            ("dataset.kind", "shapes-16x16"),
            ("degrade.kernel-size", "5"),
            ("degrade.kernel-sigma", "1.0"),
            ("steer.mode", "flowchef"),
            ("steer.nfe", "200"),
            ("steer.inner", "1"),
            ("steer.scale", "12"),
            ("steer.lr", "1.0"),
            ("steer.optimizer", "sgd"),
        ],
    ),
    (
        "shapes-sr",
        &[
            ("experiment", "invert"),
            ("invert.task", "super-resolution"),
            ("dataset.kind", "shapes-16x16"),
            ("degrade.factor", "2"),
            ("steer.mode", "flowchef"),
            ("steer.nfe", "200"),
            ("steer.inner", "1"),
            ("steer.scale", "12"),
            ("steer.lr", "1.0"),
            ("steer.optimizer", "sgd"),
        ],
    ),
    // Stepwise backprop baseline, same knobs as the skip-grad recipe.
    (
        "stepwise-inpaint",
        &[
            ("experiment", "invert"),
            ("invert.task", "box-inpaint"),
            ("dataset.kind", "shapes-16x16"),
            ("steer.mode", "stepwise-backprop"),
            ("steer.nfe", "200"),
            ("steer.inner", "1"),
            ("steer.scale", "12"),
            ("steer.lr", "1.0"),
            ("steer.optimizer", "sgd"),
        ],
    ),
    // Full-chain baseline: short chain, 20 outer Adam iterations at lr 0.5.
    (
        "chain-inpaint",
        &[
            ("experiment", "invert"),
            ("invert.task", "box-inpaint"),
            ("dataset.kind", "shapes-16x16"),
            ("steer.mode", "full-chain-backprop"),
            ("steer.nfe", "10"),
            ("steer.inner", "1"),
            ("steer.scale", "0.5"),
            ("steer.lr", "0.5"),
            ("steer.optimizer", "adam"),
            ("steer.outer-iters", "20"),
        ],
    ),
    // --- classifier guidance --------------------------------------------
    (
        "mix2d-guide",
        &[
            ("experiment", "classify-guide"),
            ("dataset.kind", "gauss-mix-2d"),
            ("guide.class", "3"),
            ("guide.samples", "500"),
            ("steer.mode", "flowchef"),
            ("steer.nfe", "100"),
            ("steer.inner", "1"),
            ("steer.scale", "1.0"),
            ("steer.lr", "0.08"),
            ("steer.optimizer", "adam"),
        ],
    ),
    // --- editing ---------------------------------------------------------
    (
        "edit-shapes",
        &[
            ("experiment", "edit"),
            ("dataset.kind", "shapes-16x16"),
            ("edit.mask-rect", "4,4,8,8"),
            ("edit.base-class", "0"),
            ("edit.edit-class", "1"),
            ("steer.mode", "flowchef"),
            ("steer.nfe", "100"),
            ("steer.inner", "1"),
            ("steer.scale", "12"),
            ("steer.lr", "1.0"),
            ("steer.optimizer", "sgd"),
            ("steer.min-t", "100"),
            ("steer.max-full-steps", "0"),
            ("steer.edit-scale", "0.5"),
        ],
    ),
    // --- theory ------------------------------------------------------------
    (
        "lemma-affine",
        &[
            ("experiment", "theory"),
            ("theory.kind", "lemma-affine"),
            ("theory.dim", "16"),
            ("theory.fields", "20"),
            ("theory.grid", "10"),
        ],
    ),
    (
        "prop41-decay",
        &[
            ("experiment", "theory"),
            ("theory.kind", "prop41-decay"),
            ("theory.dim", "2"),
            ("theory.nfe", "2000"),
            ("theory.s", "0.05,0.1"),
        ],
    ),
    (
        "curved-contrast",
        &[
            ("experiment", "theory"),
            ("theory.kind", "curved-contrast"),
            ("theory.dim", "2"),
            ("theory.nfe", "200"),
            ("theory.seeds", "10"),
            ("theory.omega", "1.0"),
            ("steer.scale", "0.25"),
            ("steer.lr", "1.0"),
        ],
    ),
    (
        "convergence-order",
        &[
            ("experiment", "theory"),
            ("theory.kind", "convergence-order"),
            ("theory.base-steps", "16"),
        ],
    ),
    (
        "straightness-check",
        &[
            ("experiment", "theory"),
            ("theory.kind", "straightness"),
            ("theory.seeds", "32"),
            ("theory.nfe", "50"),
        ],
    ),
    // --- comparison ---------------------------------------------------------
    (
        "compare-inverse",
        &[
            ("experiment", "compare"),
            ("compare.methods", "flowchef,stepwise-backprop,unguided"),
            ("compare.task", "box-inpaint"),
            ("compare.trials", "10"),
            ("dataset.kind", "shapes-16x16"),
            ("steer.nfe", "200"),
            ("steer.inner", "1"),
            ("steer.scale", "12"),
            ("steer.lr", "1.0"),
            ("steer.optimizer", "sgd"),
        ],
    ),
];

pub fn expand(name: &str) -> Option<Pairs> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, pairs)| *pairs)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_key_is_known() {
        for (name, pairs) in PRESETS {
            for (k, _) in *pairs {
                assert!(
                    crate::config::KEY_DEFAULTS.iter().any(|(known, _)| known == k),
                    "preset {name} uses unknown key {k}"
                );
            }
        }
    }

    #[test]
    fn lookup_works() {
        assert!(expand("shapes-inpaint").is_some());
        assert!(expand("nope").is_none());
        assert!(names().contains(&"pixel-inverse"));
    }
}
