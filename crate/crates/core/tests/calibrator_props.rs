use gmip::accountant::Notion;
use gmip::calibrator::{calibrate, preset, table_mus, tau_for_gdp, tau_for_gmip, PRESETS};

#[test]
fn gmip_noise_never_exceeds_gdp_noise() {
    for p in PRESETS {
        for mu in table_mus() {
            let t = p.target(Notion::Gmip, mu).unwrap();
            if let (Ok(m), Ok(d)) = (tau_for_gmip(&t), tau_for_gdp(&t)) {
                assert!(m <= d, "{} mu={mu}", p.name);
            }
        }
    }
}

#[test]
fn plug_back_reproduces_target() {
    for p in PRESETS {
        for notion in [Notion::Gdp, Notion::Gmip] {
            for mu in table_mus() {
                let t = p.target(notion, mu).unwrap();
                let tau = calibrate(&t).unwrap();
                if tau > 0.0 {
                    let got = t.achieved_mu(tau);
                    assert!((got - mu).abs() <= 1e-6 * mu.max(1.0), "{} {notion} mu={mu}: {got}", p.name);
                } else {
                    assert!(t.achieved_mu(0.0) <= mu);
                }
            }
        }
    }
}

#[test]
fn noise_non_increasing_in_target() {
    for p in PRESETS {
        for notion in [Notion::Gdp, Notion::Gmip] {
            let taus: Vec<f64> = table_mus()
                .into_iter()
                .map(|mu| calibrate(&p.target(notion, mu).unwrap()).unwrap())
                .collect();
            assert!(taus.windows(2).all(|w| w[1] <= w[0]), "{} {notion}: {taus:?}", p.name);
        }
    }
}

#[test]
fn preset_lookup() {
    assert_eq!(preset("cifar-10").unwrap().name, preset("cifar10-preset").unwrap().name);
    assert!(preset("mnist").is_none());
}
