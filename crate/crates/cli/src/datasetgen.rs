//! On-disk dataset generation: PGM files plus a label manifest for image
//! datasets, a samples CSV (which doubles as the manifest) for 2-D ones.

use flowsteer_core::tensor::Tensor;

use crate::output::AResult;
use crate::runner::{load_dataset, RunContext};

pub fn run(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    let mut rng = ctx.root_rng().child(1);
    let data = load_dataset(cfg, cfg.dataset_n, &mut rng)?;
    let n = data.data.shape()[0];
    if let Some(side) = data.image_side {
        let mut manifest = String::from("file,label\n");
        for i in 0..n {
            let name = format!("img-{i:05}.pgm");
            let img = Tensor::new(
                vec![side, side],
                data.data.data()[i * data.dim..(i + 1) * data.dim].to_vec(),
            )?;
            flowsteer_core::io::pgm::write(&ctx.dir.join(&name), &img)?;
            let label = data
                .labels
                .as_ref()
                .map(|ls| ls[i].to_string())
                .unwrap_or_default();
            manifest.push_str(&format!("{name},{label}\n"));
        }
        ctx.write_text("manifest.csv", &manifest)?;
    } else {
        let mut rows = String::from("x,y,label\n");
        for i in 0..n {
            let label = data
                .labels
                .as_ref()
                .map(|ls| ls[i].to_string())
                .unwrap_or_default();
            rows.push_str(&format!(
                "{},{},{label}\n",
                data.data.data()[i * 2],
                data.data.data()[i * 2 + 1]
            ));
        }
        ctx.write_text("samples.csv", &rows)?;
    }
    ctx.metric("count", n as f64);
    if let Some(classes) = data.classes {
        if let Some(labels) = &data.labels {
            for c in 0..classes {
                let count = labels.iter().filter(|&&l| l == c).count();
                ctx.metric(&format!("count_class_{c}"), count as f64);
            }
        }
    }
    Ok(())
}
