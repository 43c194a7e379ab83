use cdep::io::read_csv;
use cdep::AppError;

fn load(text: &str) -> Result<cdep_core::Sample, AppError> {
    read_csv(text.as_bytes(), "y", "d", &["age".to_string(), "educ".to_string()])
}

#[test]
fn reads_named_columns_in_any_order() {
    let s = load("educ,y,d,age\n12,1.5,1,30\n10,0.5,0,41\n16,2,1,25\n").unwrap();
    assert_eq!(s.n(), 3);
    assert_eq!(s.y(), &[1.5, 0.5, 2.0]);
    assert_eq!(s.x(), &[true, false, true]);
    assert_eq!(s.w_row(1), &[41.0, 10.0]);
    assert_eq!(s.names(), &["age".to_string(), "educ".to_string()]);
}

#[test]
fn missing_column() {
    let err = load("y,d,age\n1,1,30\n0,0,40\n").unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("`educ`"), "{err}");
}

#[test]
fn non_binary_treatment() {
    let err = load("y,d,age,educ\n1,1,30,12\n0,2,40,10\n").unwrap_err();
    assert!(err.to_string().contains("row 2") && err.to_string().contains("`d`"), "{err}");
}

#[test]
fn empty_and_non_finite_cells() {
    let err = load("y,d,age,educ\n1,1,30,12\n0,0,,10\n").unwrap_err();
    assert!(err.to_string().contains("row 2, column `age`"), "{err}");
    let err = load("y,d,age,educ\n1,1,30,12\nNaN,0,40,10\n").unwrap_err();
    assert!(err.to_string().contains("row 2, column `y`"), "{err}");
    let err = load("y,d,age,educ\n1,1,30,abc\n0,0,40,10\n").unwrap_err();
    assert!(err.to_string().contains("row 1, column `educ`"), "{err}");
}

#[test]
fn single_arm_is_a_data_error() {
    let err = load("y,d,age,educ\n1,1,30,12\n0,1,40,10\n").unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
