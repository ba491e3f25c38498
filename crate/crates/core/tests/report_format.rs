use teeagg::benchmark::{BenchmarkReport, Mode, ReportRow};

fn report() -> BenchmarkReport {
    BenchmarkReport::from_rows(vec![
        ReportRow::new("sum", Mode::Enclave, 1.5, 0.5, 0.25),
        ReportRow::new("sum", Mode::Plain, 0.75, 0.25, 0.1),
        ReportRow::new("lsf", Mode::Enclave, 6.0, 2.0, 1.0),
        ReportRow::new("lsf", Mode::Plain, 3.0, 1.0, 0.5),
    ])
    .unwrap()
}

const TEXT: &str = "\
function   mode        upload_ms   compute_ms     total_ms   sigma_ms
sum        enclave          1.50         0.50         2.00       0.25
           plain            0.75         0.25         1.00       0.10
lsf        enclave          6.00         2.00         8.00       1.00
           plain            3.00         1.00         4.00       0.50
geometric mean: enclave 4.00 ms, plain 2.00 ms, overhead 2.00
";

const CSV: &str = "\
function,mode,upload_mean_ms,compute_mean_ms,total_ms,stddev_ms
sum,enclave,1.500000,0.500000,2.000000,0.250000
sum,plain,0.750000,0.250000,1.000000,0.100000
lsf,enclave,6.000000,2.000000,8.000000,1.000000
lsf,plain,3.000000,1.000000,4.000000,0.500000
GEOMEAN,enclave,,,4.000000,
GEOMEAN,plain,,,2.000000,
OVERHEAD,,,,2.000000,
";

#[test]
fn text_report_layout() {
    assert_eq!(report().render_text(), TEXT);
}

#[test]
fn csv_report_layout() {
    assert_eq!(report().render_csv(), CSV);
}

#[test]
fn overhead_recomputes_from_csv() {
    let csv = report().render_csv();
    let total = |prefix: &str| -> f64 {
        let line = csv.lines().find(|l| l.starts_with(prefix)).unwrap();
        line.split(',').nth(4).unwrap().parse().unwrap()
    };
    let ratio = total("GEOMEAN,enclave") / total("GEOMEAN,plain");
    assert!((ratio - total("OVERHEAD")).abs() < 1e-6);
}
