use std::path::PathBuf;

use a2a_sounder_core::campaign::CampaignConfig;
use a2a_sounder_core::Error;

fn shipped_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

#[test]
fn shipped_default_matches_builtin_defaults() {
    let cfg = CampaignConfig::load(&shipped_config()).unwrap();
    assert_eq!(cfg, CampaignConfig::default());
}

#[test]
fn empty_document_is_the_default() {
    assert_eq!(
        CampaignConfig::from_toml("").unwrap(),
        CampaignConfig::default()
    );
}

#[test]
fn unknown_nested_key_names_its_path() {
    let err = CampaignConfig::from_toml("[trajectory]\nradius = 20.0\n").unwrap_err();
    match err {
        Error::Config { field, .. } => assert!(field.starts_with("trajectory"), "{field}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = CampaignConfig::load(&shipped_config().with_file_name("absent.toml")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}
