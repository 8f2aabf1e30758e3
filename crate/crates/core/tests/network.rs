use approx::assert_relative_eq;
use proptest::prelude::*;
use qsd_sensitivity::network::network_to_config;
use qsd_sensitivity::{load_network, preset, Error, Preset};

const BRUSSELATOR: &str = r#"
name = "brusselator"
species = ["X", "Y"]

[[reaction]]
consumed = [0, 0]
produced = [1, 0]
rate = 1.0

[[reaction]]
consumed = [1, 0]
produced = [0, 1]
rate = 2.5

[[reaction]]
consumed = [2, 1]
produced = [3, 0]
rate = 1.0

[[reaction]]
consumed = [1, 0]
produced = [0, 0]
rate = 1.0
"#;

#[test]
fn custom_network_from_toml() {
    let net = load_network(BRUSSELATOR).unwrap();
    assert_eq!(net.name(), "brusselator");
    assert_eq!(net.dim(), 2);
    assert_eq!(net.num_reactions(), 4);
    assert_eq!(net.stoich_vector(2).unwrap(), &[1, -1]);
    assert_eq!(net.reactions()[2].order(), 3);
    // f = (1, 2.5·x, x²y, x) at (2, 3)
    assert_eq!(net.propensities(&[2.0, 3.0]).unwrap(), vec![1.0, 5.0, 12.0, 2.0]);
}

#[test]
fn drift_is_stoichiometry_times_propensity() {
    let net = load_network(BRUSSELATOR).unwrap();
    let x = [2.0, 3.0];
    let mut d = vec![0.0; 2];
    net.drift_into(&x, &mut d);
    // dx = 1 − 2.5x + x²y − x, dy = 2.5x − x²y
    assert_relative_eq!(d[0], 1.0 - 5.0 + 12.0 - 2.0);
    assert_relative_eq!(d[1], 5.0 - 12.0);
}

#[test]
fn malformed_documents_are_parse_errors() {
    let bad_rate = BRUSSELATOR.replacen("rate = 2.5", "rate = 0.0", 1);
    assert!(matches!(load_network(&bad_rate), Err(Error::Parse(_))));
    let bad_arity = BRUSSELATOR.replacen("consumed = [2, 1]", "consumed = [2]", 1);
    assert!(matches!(load_network(&bad_arity), Err(Error::Parse(_))));
    assert!(matches!(load_network("species = ["), Err(Error::Parse(_))));
}

#[test]
fn presets_survive_serialization() {
    for p in Preset::ALL {
        let net = preset(p);
        let back = load_network(&network_to_config(&net)).unwrap();
        assert_eq!(back, net);
    }
}

proptest! {
    #[test]
    fn propensities_are_nonnegative_and_vanish_on_empty_reactants(
        x in prop::collection::vec(0.0f64..5.0, 2),
        zero in 0usize..2,
    ) {
        let net = load_network(BRUSSELATOR).unwrap();
        let f = net.propensities(&x).unwrap();
        prop_assert!(f.iter().all(|&v| v >= 0.0));
        let mut y = x.clone();
        y[zero] = 0.0;
        let f0 = net.propensities(&y).unwrap();
        for (k, r) in net.reactions().iter().enumerate() {
            if r.consumed()[zero] > 0 {
                prop_assert_eq!(f0[k], 0.0);
            }
        }
    }

    #[test]
    fn propensity_scales_with_reaction_order(x in prop::collection::vec(0.1f64..3.0, 2), c in 0.5f64..2.0) {
        let net = load_network(BRUSSELATOR).unwrap();
        let f = net.propensities(&x).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
        let fs = net.propensities(&xs).unwrap();
        for (k, r) in net.reactions().iter().enumerate() {
            let expect = f[k] * c.powi(r.order() as i32);
            prop_assert!((fs[k] - expect).abs() <= 1e-9 * expect.max(1.0));
        }
    }
}
