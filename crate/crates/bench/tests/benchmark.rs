use nalgebra::DVector;
use ztube::complexity::{complexity_report, live_counts, Dims, SetKind};
use ztube::program::Family;
use ztube::tube::{build_tube_program, InitialCondition};
use ztube_bench::benchmark::{prepare_chain, runtime_benchmark, write_benchmark_csv, BenchSettings, Variant};

#[test]
fn program_sizes_grow_with_chain_length() {
    let setups: Vec<_> = (1..=3).map(|ell| prepare_chain(ell, 100).unwrap()).collect();
    for v in Variant::all() {
        let mut last = 0;
        for s in &setups {
            let cfg = v.config(&s.offline, 25);
            let x0 = DVector::from_element(s.system.n(), 0.02);
            let tp = build_tube_program(&s.system, &cfg, &InitialCondition::Point(x0)).unwrap();
            let dims = Dims {
                n_nodes: 26,
                n: s.system.n(),
                m: s.system.m(),
                d: s.offline.seed.ncols(),
                d_w: s.system.w.num_generators(),
                q: 0,
                q_t: tp.program.count_rows(Family::Terminal).1,
            };
            let want = complexity_report(&dims, SetKind::Zonotopic(v.encoding), v.tube, v.with_centers).unwrap();
            assert_eq!(live_counts(&tp.program), want, "{} at ell = {}", v.name(), s.ell);
            assert!(tp.program.num_vars() > last, "{} does not grow at ell = {}", v.name(), s.ell);
            last = tp.program.num_vars();
        }
    }
}

#[test]
fn small_benchmark_rows() {
    let variants = vec![Variant::parse("elastic-phi0-c").unwrap(), Variant::parse("rigid-gamma-nc").unwrap()];
    let st = BenchSettings {
        horizon: 5,
        ..BenchSettings::default()
    };
    let rows = runtime_benchmark(&variants, &[1, 2], &st).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.status == "optimal"), "{rows:?}");
    assert!(rows.windows(2).all(|w| (w[0].ell, &w[0].variant) <= (w[1].ell, &w[1].variant)));
    let mut buf = Vec::new();
    write_benchmark_csv(&rows, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
}
