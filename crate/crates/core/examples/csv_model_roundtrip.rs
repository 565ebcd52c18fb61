//! Read a CSV, fit, save the model and predict from the reloaded file.
use scopefit::data_io::{read_csv, FitInfo, ModelFile, RawTable, SchemaHints};
use scopefit::fit::{bcd_fit, predict};
use scopefit::{Coefficients, Family, FitConfig};

fn main() -> scopefit::Result<()> {
    let dir = std::env::temp_dir().join("scopefit_roundtrip");
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("train.csv");
    let mut text = String::from("price,colour,size,weight\n");
    for i in 0..120 {
        let colour = ["red", "green", "blue", "teal"][i % 4];
        let size = ["S", "M", "L"][i % 3];
        let weight = (i % 7) as f64;
        let price = if colour == "red" || colour == "teal" { 3.0 } else { 1.0 } + 0.2 * weight + 0.01 * (i % 5) as f64;
        text.push_str(&format!("{price},{colour},{size},{weight}\n"));
    }
    std::fs::write(&csv, text)?;

    let ds = read_csv(&csv, &SchemaHints::new("price"))?;
    let design = ds.design()?;
    let fit = bcd_fit(&design, &ds.response, 8.0, 0.05, Coefficients::null(&design, &ds.response, Family::Linear), &FitConfig::default())?;
    let info = FitInfo { objective: fit.objective, sweeps: fit.sweeps, converged: fit.converged };
    let model = ModelFile::new(&design, &fit.coef, Family::Linear, &ds.response_name, 8.0, 0.05, info);
    let path = dir.join("model.json");
    model.save(&path)?;

    let loaded = ModelFile::load(&path)?;
    let enc = loaded.encode(&RawTable::from_path(&csv)?)?;
    let pred = predict(&loaded.coefficients(), loaded.family, &enc.levels, &enc.z);
    println!("fingerprint {}", loaded.fingerprint);
    println!("first predictions {:?}", &pred[..4]);
    Ok(())
}
