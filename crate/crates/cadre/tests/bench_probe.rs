#[test]
fn step_timing() {
    use cadre::dgp::{make_dataset, DgpConfig, DgpSpec, SparsitySetting};
    use cadre::model::ModelConfig;
    use cadre::objective::TrainConfig;
    let spec = DgpSpec::from_config(&DgpConfig {
        d_z: 3, d_x: 6, t_len: 10_000,
        sparsity: SparsitySetting::Independent, seed: 0,
        ..DgpConfig::default()
    }).unwrap();
    let t0 = std::time::Instant::now();
    let ds = make_dataset(&spec).unwrap();
    println!("dataset generation: {:.1} ms", t0.elapsed().as_secs_f64()*1e3);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { steps: 50, seed: 1, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let out = cadre::train::train(&ds.x, &ModelConfig::new(6, 3, 1), &cfg, dir.path(), None, None).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("50 steps: {:.2} s -> {:.1} ms/step; est 10k steps: {:.1} min", dt, dt/50.0*1e3, dt/50.0*10_000.0/60.0);
    println!("final loss: {:?}", out.history.last().unwrap().parts);
}
