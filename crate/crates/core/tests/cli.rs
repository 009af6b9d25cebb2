use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Stdio};

use evstream::sweep::{self, Manifest, CellStatus, PLOT_HEADER, REPORT_HEADER};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_evstream"));
    c.env("RUST_LOG", "warn");
    c
}

fn bench(out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .arg("bench")
        .args(["--duration", "0.3", "--seed", "7", "--out"])
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn four_cell_grid_writes_one_file_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(dir.path(), &["--rates", "200,400", "--sizes", "64,128"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = Manifest::read(dir.path()).unwrap();
    assert_eq!(manifest.cells.len(), 4);
    let order: Vec<(usize, f64)> = manifest.cells.iter().map(|c| (c.size_bytes, c.rate)).collect();
    assert_eq!(order, [(64, 200.0), (64, 400.0), (128, 200.0), (128, 400.0)]);
    let files = fs::read_dir(dir.path().join("cells")).unwrap().count();
    assert_eq!(files, 4);
    for cell in &manifest.cells {
        assert_eq!(cell.status, CellStatus::Ok);
        assert!(dir.path().join(cell.latency_file.as_ref().unwrap()).exists());
    }

    let rep = bin().arg("report").arg("--out").arg(dir.path()).output().unwrap();
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let report = fs::read_to_string(dir.path().join(sweep::REPORT_FILE)).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some(REPORT_HEADER));
    assert_eq!(lines.count(), 4);
    let plot = fs::read_to_string(dir.path().join("plot_native.csv")).unwrap();
    assert_eq!(plot.lines().next(), Some(PLOT_HEADER));
    assert_eq!(plot.lines().count(), 5);
}

#[test]
fn unreachable_server_fails_every_cell() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let dir = tempfile::tempdir().unwrap();
    let server = format!("127.0.0.1:{port}");
    let out = bench(dir.path(), &["--rates", "100", "--sizes", "64,128", "--server", &server]);
    assert!(!out.status.success());
    let manifest = Manifest::read(dir.path()).unwrap();
    assert_eq!(manifest.failed_cells(), 2);
    assert!(manifest.cells.iter().all(|c| c.error.is_some()));
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("report").arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing inputs"));
}

#[test]
fn four_profiles_give_four_plot_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(
        dir.path(),
        &[
            "--rates",
            "100",
            "--sizes",
            "64",
            "--profile",
            "native,sgx=enclave_like,sev=encrypted_vm_like,slow=enclave_like",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = sweep::build_report(dir.path()).unwrap();
    let mut names: Vec<String> = report
        .plot_paths
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["plot_native.csv", "plot_sev.csv", "plot_sgx.csv", "plot_slow.csv"]);
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!bench(dir.path(), &["--sizes", "32"]).status.success());
    assert!(!bench(dir.path(), &["--profile", "quantum"]).status.success());
    assert!(!bench(dir.path(), &["--synthetic-power", "1,2"]).status.success());
}

#[test]
fn serve_binds_and_refuses_a_taken_port() {
    let mut child = bin()
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let mut client = evstream::wire::Client::connect(addr.as_str()).unwrap();
    client.set(b"k", b"v").unwrap();
    assert_eq!(client.get(b"k").unwrap(), b"v");

    let second = bin().args(["serve", "--listen", &addr]).output().unwrap();
    assert!(!second.status.success());

    unsafe { libc::kill(child.id() as i32, libc::SIGTERM) };
    let status = child.wait().unwrap();
    assert!(status.success());
}
