use tlsloss_core::participation::*;
use tlsloss_core::units::NANOMETER;

fn defaults() -> (CpwGeometry, MaterialTable) {
    (CpwGeometry::default(), MaterialTable::default())
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

#[test]
fn fractions_are_normalised() {
    let (g, m) = defaults();
    let r = solve_cross_section(&g, &m).unwrap();
    let total: f64 = r.p.values().sum();
    assert!((total - 1.0).abs() < 1e-6);
    assert!(r.p.values().all(|p| *p >= 0.0));
    assert_eq!(r.p.len(), Region::ALL.len());
    assert!(r.mesh_stats.level_changes.last().unwrap() < &0.02);
    assert!(r.energy_total > 0.0);
    let q = r.q_tls.unwrap();
    let loss: f64 = Region::ALL.iter().map(|k| r.loss(*k, &m)).sum();
    assert_eq!(q, 1.0 / loss);
}

#[test]
fn gap_energies_are_mirror_symmetric() {
    let (g, m) = defaults();
    let (sol, _) = solve_adaptive(&g, &m, &MeshSettings::default()).unwrap();
    let grid = &sol.grid;
    let ny = grid.ny();
    let (inner, outer) = (0.5 * g.w, 0.5 * g.w + g.gap);
    let (mut left, mut right) = (0.0, 0.0);
    for i in 0..grid.nx() - 1 {
        let xc = 0.5 * (grid.xs[i] + grid.xs[i + 1]);
        if xc.abs() <= inner || xc.abs() >= outer {
            continue;
        }
        for j in 0..ny - 1 {
            let e = sol.eps[i * (ny - 1) + j] * sol.cell_field(i, j).integral();
            if xc < 0.0 {
                left += e;
            } else {
                right += e;
            }
        }
    }
    assert!(left > 0.0);
    assert!(relative(left, right) < 0.005, "{left} {right}");
}

#[test]
fn participation_is_scale_free() {
    let (g, m) = defaults();
    let a = solve_cross_section(&g, &m).unwrap();
    let b = solve_cross_section(&g.scaled(4.0), &m).unwrap();
    for r in Region::ALL {
        assert!(relative(a.get(r), b.get(r)) < 1e-6, "{r:?}");
    }
}

#[test]
fn outer_boundary_is_far_enough() {
    let (g, m) = defaults();
    let a = solve_cross_section(&g, &m).unwrap();
    let wide = CpwGeometry { domain_width: 2.0 * g.domain_width, ..g };
    let b = solve_cross_section(&wide, &m).unwrap();
    for r in Region::ALL {
        assert!(relative(a.get(r), b.get(r)) < 0.01, "{r:?}: {} vs {}", a.get(r), b.get(r));
    }
}

#[test]
fn substrate_side_grows_with_sm_permittivity() {
    let (g, m) = defaults();
    let substrate_side = |eps: f64| {
        let mut mats = m.clone();
        mats.sm.eps_r = eps;
        mats.corner.eps_r = eps;
        let r = solve_cross_section(&g, &mats).unwrap();
        r.get(Region::Substrate) + r.get(Region::Sm) + r.get(Region::Corner)
    };
    let values: Vec<f64> = [2.0, 4.0, 6.0, 8.0, 10.0].into_iter().map(substrate_side).collect();
    for w in values.windows(2) {
        assert!(w[1] >= w[0] * (1.0 - 1e-9), "{values:?}");
    }
}

#[test]
fn perturbative_layer_matches_direct_meshing() {
    let (g, m) = defaults();
    let bare = g.without_layers();
    let settings = MeshSettings {
        resolution: Some(0.25 * NANOMETER),
        ..MeshSettings::default()
    };
    let (sol, _) = solve_adaptive(&bare, &m, &settings).unwrap();
    for t in [0.5, 1.0, 2.0].map(|v| v * NANOMETER) {
        let pert = thin_layer_participation(&sol, Region::Sm, t, m.sm.eps_r, m.si.eps_r).unwrap();
        let direct = solve_cross_section(&CpwGeometry { t_sm: t, ..g }, &m).unwrap();
        let d = direct.get(Region::Sm);
        assert!(relative(pert, d) < 0.15, "t={t}: {pert} vs {d}");
    }
}

#[test]
fn perturbative_layer_rejects_thick_layers() {
    let (g, m) = defaults();
    let (sol, _) = solve_adaptive(&g.without_layers(), &m, &MeshSettings::default()).unwrap();
    assert_eq!(thin_layer_participation(&sol, Region::Sm, 0.0, 4.0, 11.7).unwrap(), 0.0);
    assert!(matches!(
        thin_layer_participation(&sol, Region::Sm, g.w / 50.0, 4.0, 11.7),
        Err(ParticipationError::NotThin { .. })
    ));
}

#[test]
fn sm_sweep_is_linear_and_lowers_q() {
    let (g, m) = defaults();
    let t: Vec<f64> = [0.1, 0.25, 0.4, 0.8, 1.2, 1.6, 2.0].iter().map(|v| v * NANOMETER).collect();
    let sweep = sweep_sm_thickness(&g, &m, &t, &MeshSettings::default()).unwrap();
    assert_eq!(sweep.points.len(), t.len());
    assert!(sweep.sm_fit.r_squared >= 0.999, "{}", sweep.sm_fit.r_squared);
    let q: Vec<f64> = sweep.points.iter().map(|p| p.result.q_tls.unwrap()).collect();
    for w in q.windows(2) {
        assert!(w[1] < w[0], "{q:?}");
    }
    let sm = sweep.series(Region::Sm);
    for w in sm.windows(2) {
        assert!(w[1] > w[0]);
    }
}

#[test]
fn metal_sweep_is_deterministic() {
    let (g, m) = defaults();
    let t = [150.0 * NANOMETER, 150.0 * NANOMETER];
    let sweep = sweep_metal_thickness(&g, &m, &t, &MeshSettings::default()).unwrap();
    assert_eq!(sweep.points[0].result, sweep.points[1].result);
    assert!(sweep.variation.iter().all(|(_, v)| *v == 0.0));
}

#[test]
fn invalid_inputs_are_rejected() {
    let (g, m) = defaults();
    let thick = CpwGeometry { t_sm: g.w / 10.0, ..g };
    assert!(matches!(solve_cross_section(&thick, &m), Err(ParticipationError::Geometry(_))));
    let narrow = CpwGeometry { domain_width: 2.0 * g.w, ..g };
    assert!(solve_cross_section(&narrow, &m).is_err());
    let mut bad = m.clone();
    bad.ma.eps_r = 0.5;
    assert!(matches!(solve_cross_section(&g, &bad), Err(ParticipationError::Material(_))));
    let strict = MeshSettings { max_levels: 1, tolerance: 0.0, ..MeshSettings::default() };
    assert!(matches!(
        solve_with(&g, &m, &strict),
        Err(ParticipationError::NotConverged { levels: 1, .. })
    ));
}
