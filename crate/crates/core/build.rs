// LAPACK/BLAS symbols are resolved against the system OpenBLAS instead of a
// *-src backend crate so no Fortran toolchain is needed at build time.
fn main() {
    println!("cargo:rustc-link-lib=dylib=openblas");
}
