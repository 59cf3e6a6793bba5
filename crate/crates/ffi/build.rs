fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();

    let mut config = cbindgen::Config::default();
    config.language = cbindgen::Language::C;
    config.include_guard = Some("STRATA_H".into());
    config.cpp_compat = true;
    config.documentation = true;
    config.enumeration.prefix_with_name = true;
    config.header = Some("/* C interface to the strata templating toolkit. */".into());

    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(header) => {
            header.write_to_file(format!("{crate_dir}/include/strata.h"));
        }
        // Keep `cargo build` usable on toolchain hiccups; the header test
        // will catch a stale or missing file.
        Err(e) => println!("cargo:warning=skipping header generation: {e}"),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
}
