//! Regenerate the bundled demo datasets in `data/`.

use qsar_core::pipeline::{demo_dataset, rank_deficient_demo, DEMO_SEED, RANK_DEFICIENT_SEED};

fn main() -> qsar_core::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data");
    demo_dataset(DEMO_SEED).save_csv(format!("{dir}/demo.csv"))?;
    rank_deficient_demo(RANK_DEFICIENT_SEED).save_csv(format!("{dir}/rank_deficient.csv"))?;
    Ok(())
}
