use neumann_cli::config::parse_entries;
use neumann_cli::medit::{parse_mesh, parse_sol, write_medit_mesh, write_medit_sol, write_mesh, MeditError};
use neumann_cli::report::{float, write_table, write_trace, Summary, TRACE_HEADER};
use neumann_core::mesh::{make_icosphere, make_torus};
use neumann_core::trace::{OptTrace, TraceRecord};
use proptest::prelude::*;

fn mesh_text(level: usize) -> String {
    let mesh = make_icosphere(level).unwrap();
    let mut buf = Vec::new();
    write_mesh(&mesh, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn parse_line(err: MeditError) -> usize {
    match err {
        MeditError::Parse { line, .. } => line,
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn icosphere0_sections() {
    let text = mesh_text(0);
    assert!(text.starts_with("MeshVersionFormatted 2\n"));
    assert!(text.contains("Dimension 3\n"));
    assert!(text.contains("Vertices\n12\n"));
    assert!(text.contains("Triangles\n20\n"));
    assert!(text.trim_end().ends_with("End"));
    let triangle_lines: Vec<&str> = text
        .lines()
        .skip_while(|l| *l != "Triangles")
        .skip(2)
        .take(20)
        .collect();
    assert!(triangle_lines.iter().all(|l| l.ends_with(" 0")));
    let indices: Vec<usize> = triangle_lines
        .iter()
        .flat_map(|l| l.split_whitespace().take(3).map(|t| t.parse::<usize>().unwrap()))
        .collect();
    assert_eq!(indices.iter().min(), Some(&1));
    assert_eq!(indices.iter().max(), Some(&12));
}

#[test]
fn icosphere3_round_trip() {
    let mesh = make_icosphere(3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mesh");
    write_medit_mesh(&mesh, &path).unwrap();
    let back = neumann_cli::medit::read_medit_mesh(&path).unwrap();
    assert_eq!(back.triangles(), mesh.triangles());
    for (a, b) in back.vertices().iter().zip(mesh.vertices()) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() <= 1e-12 * b[i].abs().max(1e-300));
        }
    }
}

#[test]
fn torus_round_trip_keeps_area() {
    let mesh = make_torus(2.0, 1.0, 16, 12).unwrap();
    let back = parse_mesh(&{
        let mut buf = Vec::new();
        write_mesh(&mesh, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    })
    .unwrap();
    assert!((back.total_area() - mesh.total_area()).abs() < 1e-12 * mesh.total_area());
}

#[test]
fn truncated_triangles_names_end_of_file_line() {
    let text = mesh_text(0);
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| *l == "Triangles").unwrap();
    let kept = &lines[..start + 2 + 5];
    let truncated = kept.join("\n");
    let err = parse_mesh(&truncated).unwrap_err();
    let msg = err.to_string();
    assert_eq!(parse_line(err), kept.len() + 1, "{msg}");
    assert!(msg.contains("end of file"), "{msg}");
}

#[test]
fn truncated_triangles_before_end_names_the_end_line() {
    let text = mesh_text(0);
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| *l == "Triangles").unwrap();
    let mut kept: Vec<&str> = lines[..start + 2 + 5].to_vec();
    kept.push("End");
    let err = parse_mesh(&kept.join("\n")).unwrap_err();
    assert!(err.to_string().contains("`End`"));
    assert_eq!(parse_line(err), kept.len());
}

#[test]
fn malformed_files_are_rejected_with_lines() {
    let text = mesh_text(0);
    assert_eq!(
        parse_line(parse_mesh(&text.replace("Dimension 3", "Dimension 2")).unwrap_err()),
        3
    );
    assert_eq!(
        parse_line(parse_mesh(&text.replace("MeshVersionFormatted", "MeshVersion")).unwrap_err()),
        1
    );
    let unknown = text.replace("Triangles", "Tetrahedra");
    assert!(parse_mesh(&unknown)
        .unwrap_err()
        .to_string()
        .contains("unknown section"));
    let zero = text.replacen("Triangles\n20\n1 ", "Triangles\n20\n0 ", 1);
    assert!(parse_mesh(&zero).unwrap_err().to_string().contains("1-based"));
    let big = text.replacen("Triangles\n20\n1 ", "Triangles\n20\n13 ", 1);
    assert!(parse_mesh(&big)
        .unwrap_err()
        .to_string()
        .contains("exceeds vertex count"));
    let no_tris: String = text
        .lines()
        .take_while(|l| *l != "Triangles")
        .collect::<Vec<_>>()
        .join("\n")
        + "\nEnd\n";
    assert!(parse_mesh(&no_tris)
        .unwrap_err()
        .to_string()
        .contains("missing Triangles"));
}

#[test]
fn extra_sections_are_skipped() {
    let text = mesh_text(0).replace("End", "Edges\n2\n1 2 0\n2 3 0\nCorners\n1\n4\nEnd");
    assert_eq!(parse_mesh(&text).unwrap().n_triangles(), 20);
}

#[test]
fn constant_sol_on_icosphere0() {
    let mesh = make_icosphere(0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.sol");
    write_medit_sol(&mesh, &[0.5; 12], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("MeshVersionFormatted 2\n"));
    assert!(text.contains("SolAtVertices\n12\n1 1\n"));
    assert_eq!(text.lines().filter(|l| *l == "0.5").count(), 12);
    assert!(text.trim_end().ends_with("End"));
}

#[test]
fn sol_rejects_nan_and_count_mismatch() {
    let mesh = make_icosphere(0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.sol");
    let mut values = vec![0.0; 12];
    values[7] = f64::NAN;
    assert!(matches!(
        write_medit_sol(&mesh, &values, &path),
        Err(MeditError::NotFinite { index: 7, .. })
    ));
    assert!(!path.exists());
    assert!(matches!(
        write_medit_sol(&mesh, &[0.0; 11], &path),
        Err(MeditError::Count(11, 12))
    ));
    assert!(!path.exists());
}

proptest! {
    #[test]
    fn sol_round_trip(values in prop::collection::vec(-1e6f64..1e6, 12)) {
        let mesh = make_icosphere(0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.sol");
        write_medit_sol(&mesh, &values, &path).unwrap();
        let back = parse_sol(&std::fs::read_to_string(&path).unwrap()).unwrap();
        prop_assert_eq!(back.len(), values.len());
        for (a, b) in back.iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn float_has_17_significant_digits_and_round_trips(x in prop::num::f64::NORMAL) {
        let s = float(x);
        let mantissa = s.trim_start_matches('-').split('e').next().unwrap();
        prop_assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
        prop_assert_eq!(s.parse::<f64>().unwrap(), x);
    }
}

#[test]
fn float_format_examples() {
    assert_eq!(float(0.5), "5.0000000000000000e-1");
    assert_eq!(float(0.1), "1.0000000000000001e-1");
    assert_eq!(float(-2.0), "-2.0000000000000000e0");
}

fn record(iteration: usize, eigs: Vec<f64>) -> TraceRecord {
    TraceRecord {
        restart: 0,
        stage: 1,
        epsilon: 1e-4,
        iteration,
        objective: 1.5,
        cluster_size: eigs.len(),
        eigenvalues: eigs,
        mass: 2.0,
        step: 0.25,
        accepted: true,
    }
}

#[test]
fn trace_csv_layout() {
    let trace = OptTrace {
        records: vec![record(0, vec![1.5]), record(1, vec![1.5, 1.75])],
        ..OptTrace::default()
    };
    let mut buf = Vec::new();
    write_trace(&mut buf, &trace).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], TRACE_HEADER.join(","));
    assert_eq!(lines.len(), 3);
    assert_eq!(
        lines[2],
        "0,1,1.0000000000000000e-4,1,1.5000000000000000e0,1.5000000000000000e0 1.7500000000000000e0,\
         2.0000000000000000e0,2.5000000000000000e-1,2,true"
    );
}

#[test]
fn table_ends_rows_with_lf() {
    let mut buf = Vec::new();
    write_table(&mut buf, &["a", "b"], &[vec!["1".into(), "2".into()]]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n1,2\n");
}

#[test]
fn summary_line_and_audit() {
    let s = Summary {
        k: 1,
        mass: 2.0 * std::f64::consts::PI,
        mu_k: 1.0,
    };
    assert_eq!(s.bound(), 1.0);
    assert_eq!(s.audit(), "pass");
    assert!(s.line().starts_with("m=6.283185307179586 mu_k=1 bound=1 "));
    let over = Summary { mu_k: 1.01, ..s };
    assert_eq!(over.audit(), "fail");
    let mut buf = Vec::new();
    over.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("k,m,mu_k,bound,strichartz\n"));
    assert!(text.trim_end().ends_with(",fail"));
}

#[test]
fn config_entries() {
    let text = "# run\nmax_iters = 40\n\nseed=3 # trailing\n  exclude-ball = true\n";
    let entries = parse_entries(text).unwrap();
    assert_eq!(
        entries,
        vec![
            (2, "max-iters".to_string(), "40".to_string()),
            (4, "seed".to_string(), "3".to_string()),
            (5, "exclude-ball".to_string(), "true".to_string()),
        ]
    );
    assert_eq!(parse_entries("a = 1\nnonsense\n").unwrap_err().0, 2);
    assert_eq!(parse_entries(" = 4").unwrap_err().0, 1);
}
