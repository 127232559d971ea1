use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sphere_dmc::channel::log_grid;
use sphere_dmc::ook::{analytic_ber, monte_carlo, DetectorMode, IsiProfile, LinkConfig};
use sphere_dmc::pbs::{estimate_p_obs, PbsConfig};
use sphere_dmc::{
    Channel, EigenvalueTable, Environment, Execution, Propagation, ReceiverSpec, SphericalPoint, TruncationPolicy,
};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn environment() -> Environment {
    Environment::new(5e-6, 1e-9, 20.0, 1e-4).unwrap()
}

fn tx() -> SphericalPoint {
    SphericalPoint::new(3e-6, PI / 2.0, 0.0).unwrap()
}

fn rx() -> ReceiverSpec {
    ReceiverSpec::new(SphericalPoint::new(4e-6, PI / 4.0, 3.0 * PI / 4.0).unwrap(), 1e-6).unwrap()
}

fn table_build(c: &mut Criterion) {
    let env = environment();
    let mut g = c.benchmark_group("eigen_table_40x80");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| EigenvalueTable::build(&env, 40, 80, exec).unwrap()));
    }
    g.finish();
}

fn curves(c: &mut Criterion) {
    let env = environment();
    let table = EigenvalueTable::build(&env, 40, 80, Execution::Parallel).unwrap();
    let trunc = TruncationPolicy::for_environment(&env);
    let prop = Propagation::Bounded { env: &env, table: &table, trunc: &trunc };
    let times = log_grid(1e-4, 0.1, 128);
    let mut g = c.benchmark_group("pdf_curve_128");
    g.sample_size(10);
    for (name, exec) in MODES {
        let ch = Channel::new(prop, tx(), rx()).unwrap().with_execution(exec);
        g.bench_with_input(BenchmarkId::new("approx", name), &times, |b, t| b.iter(|| ch.approx_curve(t).unwrap()));
        g.bench_with_input(BenchmarkId::new("exact", name), &times[64..68], |b, t| {
            b.iter(|| ch.exact_curve(t).unwrap())
        });
    }
    g.finish();
}

fn particles(c: &mut Criterion) {
    let env = environment();
    let cfg = PbsConfig {
        dt: 1e-5,
        n_particles: 20_000,
        seed: 1,
        bin_width: 1e-3,
        record_window: (1e-3, 1e-2),
    };
    let mut g = c.benchmark_group("pbs_20k_particles");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| estimate_p_obs(&tx(), &rx(), &env, &cfg, exec).unwrap()));
    }
    g.finish();
}

fn ber(c: &mut Criterion) {
    let link = LinkConfig {
        n_molecules: 5e4,
        slot: 0.02,
        memory: 12,
        sampling_time: 0.005,
        mode: DetectorMode::Genie,
    };
    let profile = IsiProfile::new((0..13).map(|i| 2e-3 * 0.6f64.powi(i)).collect());
    let mut g = c.benchmark_group("ber_memory_12");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("enumeration", name), |b| {
            b.iter(|| analytic_ber(&link, &profile, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("monte_carlo_1e5", name), |b| {
            b.iter(|| monte_carlo(&link, &profile, 100_000, 7, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, table_build, curves, particles, ber);
criterion_main!(benches);
