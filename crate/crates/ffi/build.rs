fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let enumeration = cbindgen::EnumConfig {
        prefix_with_name: true,
        rename_variants: cbindgen::RenameRule::ScreamingSnakeCase,
        ..Default::default()
    };

    let header = std::path::Path::new(&crate_dir).join("include").join("spanconf.h");
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(cbindgen::Config {
            language: cbindgen::Language::C,
            cpp_compat: true,
            usize_is_size_t: true,
            include_guard: Some("SPANCONF_H".into()),
            documentation_style: cbindgen::DocumentationStyle::C99,
            enumeration,
            ..Default::default()
        })
        .generate()
        .expect("cbindgen failed")
        .write_to_file(header);
    println!("cargo:rerun-if-changed=src/lib.rs");
}
