use b2mdf::apk_static::{
    analyze_apk, decode_method, open_apk, parse_dex, parse_manifest, OpcodeTrace, StaticError, Watchlists,
};
use b2mdf::payload::ApiHit;
use b2mdf_testkit::apk::ApkBuilder;
use b2mdf_testkit::fixtures::{self, app_corpus, dex_fixtures, manifest_fixtures};
use proptest::prelude::*;

#[test]
fn dex_fixtures_match_hand_decoded_oracles() {
    for fx in dex_fixtures() {
        let dex = parse_dex(&fx.bytes).unwrap_or_else(|e| panic!("{}: {e}", fx.name));
        assert_eq!(dex.code_items.len(), fx.methods.len(), "{}", fx.name);
        for (item, oracle) in dex.code_items.iter().zip(&fx.methods) {
            assert_eq!(item.insns.len(), oracle.insns_size, "{}", fx.name);
            let mut trace = OpcodeTrace::default();
            let consumed = decode_method(&item.insns, item.method_index, &mut trace).unwrap();
            assert_eq!(consumed, oracle.insns_size, "{}", fx.name);
            assert_eq!(trace.opcodes, oracle.opcodes, "{}", fx.name);
        }
        for s in &fx.strings {
            assert!(dex.string_table.iter().any(|t| t == s), "{}: missing {s}", fx.name);
        }
    }
}

#[test]
fn dex_method_refs_resolve() {
    let dex = parse_dex(&fixtures::dex_sms().bytes).unwrap();
    let refs: Vec<(&str, &str, &str)> = dex
        .method_refs
        .iter()
        .map(|m| (m.class.as_str(), m.name.as_str(), m.shorty.as_str()))
        .collect();
    assert_eq!(
        refs,
        [
            (fixtures::SMS_MANAGER, "sendTextMessage", "VLLLLL"),
            (fixtures::TELEPHONY, "getDeviceId", "L"),
            ("Lcom/fakebank/Main;", "onCreate", "V"),
            ("Lcom/fakebank/Main;", "steal", "V"),
        ]
    );
}

#[test]
fn axml_and_text_manifests_agree() {
    for fx in manifest_fixtures() {
        let from_axml = parse_manifest(&fx.axml()).unwrap_or_else(|e| panic!("{}: {e}", fx.name));
        let from_text = parse_manifest(fx.text().as_bytes()).unwrap_or_else(|e| panic!("{}: {e}", fx.name));
        assert_eq!(from_axml, from_text, "{}", fx.name);
        let o = &fx.oracle;
        assert_eq!(from_axml.package_name, o.package);
        assert_eq!(from_axml.version_code, o.version_code);
        assert_eq!(from_axml.version_name, o.version_name);
        assert_eq!(from_axml.permissions, o.permissions);
        assert_eq!(from_axml.intent_filters, o.intent_filters);
        assert_eq!(from_axml.components.len(), o.components);
    }
}

#[test]
fn corpus_static_features() {
    let w = Watchlists::default();
    for app in app_corpus() {
        let f = analyze_apk(&app.apk, &w).unwrap_or_else(|e| panic!("{}: {e}", app.name));
        assert_eq!(f.app_version().app_id, app.app_id);
        assert_eq!(f.app_version().version_code, app.version_code);
        assert!(f.well_known.android_manifest && f.well_known.classes_dex);
        assert_eq!(f.opcodes.opcode_histogram.iter().sum::<u64>(), f.opcodes.opcodes.len() as u64);
    }
}

#[test]
fn multidex_concatenates_in_load_order() {
    let f = analyze_apk(&fixtures::app_fakebank().apk, &Watchlists::default()).unwrap();
    let mut expected = fixtures::dex_sms().sequence();
    expected.extend(fixtures::dex_switches().sequence());
    assert_eq!(f.opcodes.opcodes, expected);
    assert_eq!(
        f.api_calls.hits,
        [
            ApiHit {
                class_contains: fixtures::TELEPHONY.into(),
                method: "getDeviceId".into(),
                count: 1
            },
            ApiHit {
                class_contains: fixtures::SMS_MANAGER.into(),
                method: "sendTextMessage".into(),
                count: 1
            },
        ]
    );
    let cmds: Vec<(&str, u64)> = f.commands.hits.iter().map(|h| (h.command.as_str(), h.count)).collect();
    assert_eq!(cmds, [("chmod", 1), ("/system/bin/su", 1)]);
    assert_eq!(f.permissions.permissions.len(), 3);
}

#[test]
fn stored_and_deflated_entries_decode_identically() {
    let dex = fixtures::dex_hello().bytes;
    let manifest = fixtures::manifest_notes(1).axml();
    let a = ApkBuilder::new().entry("AndroidManifest.xml", manifest.clone()).entry("classes.dex", dex.clone()).build();
    let b = ApkBuilder::new().stored("AndroidManifest.xml", manifest).stored("classes.dex", dex.clone()).build();
    let (a, b) = (open_apk(&a).unwrap(), open_apk(&b).unwrap());
    assert_eq!(a.get("classes.dex").unwrap().data, dex);
    assert_eq!(a.entries, b.entries);
}

#[test]
fn missing_manifest_and_bad_dex_are_reported() {
    let apk = ApkBuilder::new().entry("classes.dex", fixtures::dex_hello().bytes).build();
    assert_eq!(
        analyze_apk(&apk, &Watchlists::default()).unwrap_err(),
        StaticError::MissingEntry("AndroidManifest.xml")
    );
    let mut dex = fixtures::dex_hello().bytes;
    dex[4..7].copy_from_slice(b"034");
    let apk = ApkBuilder::new()
        .entry("AndroidManifest.xml", fixtures::manifest_notes(1).axml())
        .entry("classes.dex", dex)
        .build();
    assert!(matches!(analyze_apk(&apk, &Watchlists::default()), Err(StaticError::Dex { .. })));
}

#[test]
fn crc_mismatch_is_detected() {
    let mut apk = ApkBuilder::new().stored("classes.dex", b"dex\n035\0payload".to_vec()).build();
    let at = apk.windows(7).position(|w| w == b"payload").unwrap();
    apk[at] ^= 0x20;
    assert_eq!(open_apk(&apk).unwrap_err(), StaticError::CrcMismatch("classes.dex".into()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mutated_fixtures_never_panic(which in 0usize..6, flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..8)) {
        let mut bytes = dex_fixtures()[which].bytes.clone();
        for (i, b) in &flips {
            let at = i.index(bytes.len());
            bytes[at] = *b;
        }
        let _ = parse_dex(&bytes);
        let manifest = manifest_fixtures()[which % 4].axml();
        let mut m = manifest.clone();
        for (i, b) in &flips {
            let at = i.index(m.len());
            m[at] = *b;
        }
        let _ = parse_manifest(&m);
    }

    #[test]
    fn truncated_fixtures_never_panic(which in 0usize..6, cut in any::<prop::sample::Index>()) {
        let bytes = dex_fixtures()[which].bytes.clone();
        let _ = parse_dex(&bytes[..cut.index(bytes.len())]);
        let apk = app_corpus()[which % 5].apk.clone();
        let _ = open_apk(&apk[..cut.index(apk.len())]);
    }
}
