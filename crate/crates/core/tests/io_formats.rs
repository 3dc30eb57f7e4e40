use std::fs;

use fuel_mfg::calibration::{ClusterAssignment, PricePanel, StationSeries};
use fuel_mfg::dynamics::{simulate, solve_equilibrium};
use fuel_mfg::io::{
    read_cluster_assignment, read_config, read_price_panel, read_trajectory_csv, render_results, write_price_panel,
    write_results, ResultRef,
};
use fuel_mfg::model::{ClusterParams, MarketState, Population, Regime};
use fuel_mfg::Error;
use tempfile::TempDir;

#[test]
fn panel_round_trip_through_files() {
    let dir = TempDir::new().unwrap();
    let stations = vec![
        StationSeries {
            id: "north".into(),
            prices: vec![1.799, 1.8123456789, 1.0 / 3.0],
        },
        StationSeries {
            id: "south".into(),
            prices: vec![1.9, 2.0, 1.95],
        },
    ];
    let dates = vec!["2023-06-01".into(), "2023-06-02".into(), "2023-06-03".into()];
    let panel = PricePanel::new(stations, dates).unwrap();
    let path = dir.path().join("p.csv");
    write_price_panel(&panel, &path).unwrap();
    assert_eq!(read_price_panel(&path).unwrap(), panel);
}

#[test]
fn three_cluster_config_has_194_agents() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("c.json");
    fs::write(
        &path,
        r#"{"clusters":[
            {"alpha":3.912,"beta":5.186,"gamma":2.021,"delta":2.210,"count":19},
            {"alpha":10.144,"beta":0.562,"gamma":7.192,"delta":1.701,"count":79},
            {"alpha":11.191,"beta":0.357,"gamma":0.574,"delta":1.654,"count":96}],
           "sigmas":0.027,"tolerances":{"root_tol":1e-13,"fixed_point_tol":1e-9},"seed":4,"days":77}"#,
    )
    .unwrap();
    let (pop, settings) = read_config(&path).unwrap();
    assert_eq!(pop.len(), 194);
    assert_eq!(pop.clusters().len(), 3);
    assert_eq!(pop.agents()[19].cluster, 1);
    assert_eq!(settings.days, Some(77));
    assert_eq!(settings.seed, 4);
    assert_eq!(settings.root_tol, 1e-13);
}

#[test]
fn missing_files_are_io_errors_with_paths() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("absent.csv");
    let err = read_price_panel(&path).unwrap_err();
    assert!(err.is_io());
    assert!(err.to_string().contains("absent.csv"));
}

#[test]
fn trajectory_csv_shape_and_round_trip() {
    let dir = TempDir::new().unwrap();
    let pop = Population::from_counts(
        vec![ClusterParams::new(3.0, 1.0, 5.0, 1.0).unwrap()],
        &[2],
        0.027,
        Regime::Standard,
    )
    .unwrap();
    let traj = simulate(&pop, &MarketState::new(vec![1.8, 1.9]).unwrap(), 2, 1e-12).unwrap();
    let path = dir.path().join("t.csv");
    write_results(ResultRef::Trajectory(&traj), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.lines().next(), Some("day,mean,p_1,p_2"));
    assert!(text.lines().nth(1).unwrap().starts_with("0,1.850000,1.800000,1.900000"));
    let table = read_trajectory_csv(&path).unwrap();
    for (a, b) in table.means.iter().zip(traj.means()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn outputs_are_deterministic_and_atomic() {
    let dir = TempDir::new().unwrap();
    let pop = Population::from_counts(
        vec![ClusterParams::new(3.0, 1.0, 5.0, 1.0).unwrap()],
        &[3],
        0.027,
        Regime::Standard,
    )
    .unwrap();
    let init = MarketState::new(vec![1.8, 1.9, 1.7]).unwrap();
    let r = solve_equilibrium(&pop, &init, 1e-10, 10_000).unwrap();
    let a = render_results(ResultRef::Equilibrium(&r)).unwrap();
    let b = render_results(ResultRef::Equilibrium(
        &solve_equilibrium(&pop, &init, 1e-10, 10_000).unwrap(),
    ))
    .unwrap();
    assert_eq!(a, b);
    assert!(a.contains("\"bound_L\""));

    let path = dir.path().join("eq.json");
    write_results(ResultRef::Equilibrium(&r), &path).unwrap();
    let names: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names.len(), 1, "temporary file left behind: {names:?}");
}

#[test]
fn cluster_assignment_round_trip_is_strict() {
    let dir = TempDir::new().unwrap();
    let features = vec![vec![0.0], vec![1.0], vec![5.0]];
    let a = ClusterAssignment::from_labels(vec![0, 0, 1], 2, &features).unwrap();
    let path = dir.path().join("a.json");
    write_results(ResultRef::Clusters(&a), &path).unwrap();
    assert_eq!(read_cluster_assignment(&path).unwrap(), a);

    let text = fs::read_to_string(&path).unwrap().replacen('{', "{\"extra\": 1,", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(read_cluster_assignment(&path), Err(Error::Format(_))));
}
