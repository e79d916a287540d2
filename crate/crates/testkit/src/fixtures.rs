//! Hand-assembled fixture corpus. Opcode oracles are written out by hand
//! from the instruction encodings, not computed.

use crate::apk::ApkBuilder;
use crate::axml::{AttrValue, AxmlOptions, XmlElement};
use crate::dex::DexBuilder;

/// One method body and its hand-decoded opcode list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodOracle {
    pub insns_size: usize,
    pub opcodes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct DexFixture {
    pub name: &'static str,
    pub bytes: Vec<u8>,
    /// In code-item order.
    pub methods: Vec<MethodOracle>,
    pub strings: Vec<&'static str>,
}

impl DexFixture {
    pub fn sequence(&self) -> Vec<u8> {
        self.methods.iter().flat_map(|m| m.opcodes.iter().copied()).collect()
    }
}

fn oracle(insns: &[u16], opcodes: &[u8]) -> MethodOracle {
    MethodOracle {
        insns_size: insns.len(),
        opcodes: opcodes.to_vec(),
    }
}

pub const TELEPHONY: &str = "Landroid/telephony/TelephonyManager;";
pub const SMS_MANAGER: &str = "Landroid/telephony/SmsManager;";
pub const PACKAGE_MANAGER: &str = "Landroid/content/pm/PackageManager;";

/// Arithmetic only.
pub fn dex_hello() -> DexFixture {
    let mut b = DexBuilder::new(*b"035");
    let add = b.method("Lcom/example/Hello;", "add", "I");
    let run = b.method("Lcom/example/Hello;", "run", "V");
    // const/4 v0,#1 | const/4 v1,#2 | add-int/2addr v0,v1 | return v0
    let m0 = [0x1012, 0x2112, 0x10b0, 0x000f];
    // return-void
    let m1 = [0x000e];
    b.class("Lcom/example/Hello;").direct(add, &m0).virtual_method(run, &m1);
    DexFixture {
        name: "hello",
        bytes: b.build(),
        methods: vec![oracle(&m0, &[0x12, 0x12, 0xb0, 0x0f]), oracle(&m1, &[0x0e])],
        strings: vec![],
    }
}

/// Watchlisted telephony calls and a root shell string.
pub fn dex_sms() -> DexFixture {
    let mut b = DexBuilder::new(*b"035");
    let send = b.method(SMS_MANAGER, "sendTextMessage", "VLLLLL");
    let imei = b.method(TELEPHONY, "getDeviceId", "L");
    let main = b.method("Lcom/fakebank/Main;", "onCreate", "V");
    let steal = b.method("Lcom/fakebank/Main;", "steal", "V");
    let su = b.string("/system/bin/su") as u16;
    b.string("chmod 777 /data/local/tmp/x");
    // const-string v0,"/system/bin/su" | invoke-virtual {v0,v1},getDeviceId |
    // move-result-object v2 | if-eqz v2,+3 | return-void | return-void
    let m0 = [0x001a, su, 0x206e, imei as u16, 0x0010, 0x020c, 0x0238, 0x0003, 0x000e, 0x000e];
    // invoke-static {},sendTextMessage | return-void
    let m1 = [0x0071, send as u16, 0x0000, 0x000e];
    b.class("Lcom/fakebank/Main;").direct(main, &m0).direct(steal, &m1);
    DexFixture {
        name: "sms",
        bytes: b.build(),
        methods: vec![
            oracle(&m0, &[0x1a, 0x6e, 0x0c, 0x38, 0x0e, 0x0e]),
            oracle(&m1, &[0x71, 0x0e]),
        ],
        strings: vec!["/system/bin/su", "chmod 777 /data/local/tmp/x"],
    }
}

/// Switch and array payload pseudo-instructions.
pub fn dex_switches() -> DexFixture {
    let mut b = DexBuilder::new(*b"037");
    let sw = b.method("Lorg/sw/Switches;", "dispatch", "VI");
    let fill = b.method("Lorg/sw/Switches;", "fill", "V");
    let nop = b.method("Lorg/sw/Switches;", "idle", "V");
    #[rustfmt::skip]
    let m0 = [
        0x002b, 0x0004, 0x0000,         // packed-switch v0,+4
        0x000e,                         // return-void
        0x0100, 0x0002, 0x0000, 0x0000, // packed-switch-payload size=2 first_key=0
        0x0003, 0x0000, 0x0003, 0x0000, //   targets
        0x012c, 0x0004, 0x0000,         // sparse-switch v1,+4
        0x000e,                         // return-void
        0x0200, 0x0001,                 // sparse-switch-payload size=1
        0x0007, 0x0000,                 //   key
        0x0003, 0x0000,                 //   target
    ];
    #[rustfmt::skip]
    let m1 = [
        0x0026, 0x0004, 0x0000,         // fill-array-data v0,+4
        0x000e,                         // return-void
        0x0300, 0x0004, 0x0002, 0x0000, // fill-array-data-payload width=4 size=2
        0x0001, 0x0000, 0x0002, 0x0000, //   data
    ];
    // nop | return-void
    let m2 = [0x0000, 0x000e];
    b.class("Lorg/sw/Switches;").direct(sw, &m0).direct(fill, &m1).virtual_method(nop, &m2);
    DexFixture {
        name: "switches",
        bytes: b.build(),
        methods: vec![
            oracle(&m0, &[0x2b, 0x0e, 0x2c, 0x0e]),
            oracle(&m1, &[0x26, 0x0e]),
            oracle(&m2, &[0x00, 0x0e]),
        ],
        strings: vec![],
    }
}

/// Wide constants, jumbo strings, range invokes and literal arithmetic.
pub fn dex_wide() -> DexFixture {
    let mut b = DexBuilder::new(*b"038");
    let calc = b.method("Lcom/tools/Calc;", "calc", "J");
    let mix = b.method("Lcom/tools/Calc;", "mix", "I");
    let pkgs = b.method(PACKAGE_MANAGER, "getInstalledPackages", "LI");
    let s = b.string("mount -o remount,rw /system");
    b.string("chown root:root /system/xbin/su");
    #[rustfmt::skip]
    let m0 = [
        0x0018, 0x1111, 0x2222, 0x3333, 0x4444, // const-wide v0,#lit64
        0x0216, 0x0010,                         // const-wide/16 v2,#16
        0x0417, 0x0001, 0x0000,                 // const-wide/32 v4,#1
        0x061b, s as u16, (s >> 16) as u16,     // const-string/jumbo v6
        0x009b, 0x0200,                         // add-long v0,v0,v2
        0x0010,                                 // return-wide v0
    ];
    #[rustfmt::skip]
    let m1 = [
        0x0274, pkgs as u16, 0x0000,            // invoke-virtual/range {v0..v1}
        0x000b,                                 // move-result-wide v0
        0x107b,                                 // neg-int v0,v1
        0x1081,                                 // int-to-long v0,v1
        0x10d2, 0x0064,                         // mul-int/lit16 v0,v1,#100
        0x00d8, 0x0701,                         // add-int/lit8 v0,v1,#7
        0x000f,                                 // return v0
    ];
    b.class("Lcom/tools/Calc;").direct(calc, &m0).virtual_method(mix, &m1);
    DexFixture {
        name: "wide",
        bytes: b.build(),
        methods: vec![
            oracle(&m0, &[0x18, 0x16, 0x17, 0x1b, 0x9b, 0x10]),
            oracle(&m1, &[0x74, 0x0b, 0x7b, 0x81, 0xd2, 0xd8, 0x0f]),
        ],
        strings: vec!["mount -o remount,rw /system", "chown root:root /system/xbin/su"],
    }
}

/// Version-039 opcodes, field access, abstract methods and static fields.
pub fn dex_modern() -> DexFixture {
    let mut b = DexBuilder::new(*b"039");
    let poly = b.method("Lorg/games/Engine;", "invoke", "V");
    let abs = b.method("Lorg/games/Engine;", "tick", "V");
    let fields = b.method("Lorg/games/Board;", "score", "I");
    #[rustfmt::skip]
    let m0 = [
        0x10fa, 0x0000, 0x0000, 0x0000, // invoke-polymorphic
        0x00fc, 0x0000, 0x0000,         // invoke-custom
        0x00fe, 0x0000,                 // const-method-handle
        0x00ff, 0x0000,                 // const-method-type
        0x00fd, 0x0000, 0x0000,         // invoke-custom/range
        0x00fb, 0x0000, 0x0000, 0x0000, // invoke-polymorphic/range
        0x000e,                         // return-void
    ];
    #[rustfmt::skip]
    let m1 = [
        0x1052, 0x0000, // iget v0,v1,field@0
        0x105b, 0x0000, // iput-object v0,v1,field@0
        0x0060, 0x0000, // sget v0,field@0
        0x0044, 0x0201, // aget v0,v1,v2
        0x0031, 0x0201, // cmp-long v0,v1,v2
        0x1021,         // array-length v0,v1
        0x0022, 0x0000, // new-instance v0,type@0
        0x001f, 0x0000, // check-cast v0,type@0
        0x0027,         // throw v0
    ];
    b.class("Lorg/games/Engine;").static_fields(2).direct(poly, &m0).abstract_method(abs);
    b.class("Lorg/games/Empty;");
    b.class("Lorg/games/Board;").virtual_method(fields, &m1);
    DexFixture {
        name: "modern",
        bytes: b.build(),
        methods: vec![
            oracle(&m0, &[0xfa, 0xfc, 0xfe, 0xff, 0xfd, 0xfb, 0x0e]),
            oracle(&m1, &[0x52, 0x5b, 0x60, 0x44, 0x31, 0x21, 0x22, 0x1f, 0x27]),
        ],
        strings: vec![],
    }
}

/// Several methods sharing one class, including a zero-length body.
pub fn dex_many() -> DexFixture {
    let mut b = DexBuilder::new(*b"035");
    let ids: Vec<u32> = (0..4).map(|i| b.method("Lnet/many/M;", &format!("m{i}"), "V")).collect();
    let bodies: [&[u16]; 4] = [
        // move v0,v1 | move-wide v0,v2 | move-object v0,v1 | return-void
        &[0x1001, 0x2004, 0x1007, 0x000e],
        // empty body
        &[],
        // goto +0 | goto/16 +0 | goto/32 +0
        &[0x0028, 0x0029, 0x0000, 0x002a, 0x0000, 0x0000],
        // monitor-enter v0 | monitor-exit v0 | return-object v0
        &[0x001d, 0x001e, 0x0011],
    ];
    let mut c = b.class("Lnet/many/M;");
    for (id, body) in ids.iter().zip(bodies) {
        c.direct(*id, body);
    }
    DexFixture {
        name: "many",
        bytes: b.build(),
        methods: vec![
            oracle(bodies[0], &[0x01, 0x04, 0x07, 0x0e]),
            oracle(bodies[1], &[]),
            oracle(bodies[2], &[0x28, 0x29, 0x2a]),
            oracle(bodies[3], &[0x1d, 0x1e, 0x11]),
        ],
        strings: vec![],
    }
}

pub fn dex_fixtures() -> Vec<DexFixture> {
    vec![dex_hello(), dex_sms(), dex_switches(), dex_wide(), dex_modern(), dex_many()]
}

/// Expected manifest fields, written out by hand.
#[derive(Debug, Clone)]
pub struct ManifestOracle {
    pub package: &'static str,
    pub version_code: u64,
    pub version_name: &'static str,
    pub permissions: Vec<&'static str>,
    pub intent_filters: Vec<&'static str>,
    pub components: usize,
}

#[derive(Debug, Clone)]
pub struct ManifestFixture {
    pub name: &'static str,
    pub tree: XmlElement,
    pub options: AxmlOptions,
    pub oracle: ManifestOracle,
}

impl ManifestFixture {
    pub fn axml(&self) -> Vec<u8> {
        self.tree.to_axml(self.options)
    }

    pub fn text(&self) -> String {
        self.tree.to_text()
    }
}

fn perm(name: &str) -> XmlElement {
    XmlElement::new("uses-permission").android_str("name", name)
}

fn action(name: &str) -> XmlElement {
    XmlElement::new("action").android_str("name", name)
}

pub fn manifest_notes(version_code: i32) -> ManifestFixture {
    let tree = XmlElement::new("manifest")
        .attr("package", AttrValue::Str("com.example.notes".into()))
        .android("versionCode", AttrValue::Int(version_code))
        .android_str("versionName", &format!("1.{version_code}"))
        .child(XmlElement::new("uses-sdk").android("minSdkVersion", AttrValue::Int(21)))
        .child(perm("android.permission.INTERNET"))
        .child(
            XmlElement::new("application")
                .android("label", AttrValue::Ref(0x7f0b_0001))
                .child(
                    XmlElement::new("activity")
                        .android_str("name", ".MainActivity")
                        .android("exported", AttrValue::Bool(true))
                        .child(
                            XmlElement::new("intent-filter")
                                .child(action("android.intent.action.MAIN"))
                                .child(
                                    XmlElement::new("category")
                                        .android_str("name", "android.intent.category.LAUNCHER"),
                                ),
                        ),
                ),
        );
    ManifestFixture {
        name: "notes",
        tree,
        options: AxmlOptions::default(),
        oracle: ManifestOracle {
            package: "com.example.notes",
            version_code: version_code as u64,
            version_name: if version_code == 1 { "1.1" } else { "1.2" },
            permissions: vec!["android.permission.INTERNET"],
            intent_filters: vec!["android.intent.action.MAIN"],
            components: 1,
        },
    }
}

pub fn manifest_fakebank() -> ManifestFixture {
    let tree = XmlElement::new("manifest")
        .attr("package", AttrValue::Str("com.fakebank.sms".into()))
        .android("versionCode", AttrValue::Hex(0x2a))
        .android_str("versionName", "4.2")
        .child(perm("android.permission.SEND_SMS"))
        .child(perm("android.permission.RECEIVE_SMS"))
        .child(perm("android.permission.READ_PHONE_STATE"))
        .child(perm("android.permission.SEND_SMS"))
        .child(
            XmlElement::new("uses-feature")
                .android_str("name", "android.hardware.telephony")
                .android("required", AttrValue::Bool(false)),
        )
        .child(
            XmlElement::new("application")
                .child(XmlElement::new("activity").android_str("name", ".LoginActivity"))
                .child(
                    XmlElement::new("receiver")
                        .android_str("name", ".SmsReceiver")
                        .child(
                            XmlElement::new("intent-filter")
                                .child(action("android.provider.Telephony.SMS_RECEIVED")),
                        ),
                )
                .child(XmlElement::new("service").android_str("name", ".Uploader")),
        );
    ManifestFixture {
        name: "fakebank",
        tree,
        options: AxmlOptions {
            utf8: true,
            strip_attr_names: false,
        },
        oracle: ManifestOracle {
            package: "com.fakebank.sms",
            version_code: 42,
            version_name: "4.2",
            permissions: vec![
                "android.permission.SEND_SMS",
                "android.permission.RECEIVE_SMS",
                "android.permission.READ_PHONE_STATE",
            ],
            intent_filters: vec!["android.provider.Telephony.SMS_RECEIVED"],
            components: 3,
        },
    }
}

pub fn manifest_rootkit() -> ManifestFixture {
    let tree = XmlElement::new("manifest")
        .attr("package", AttrValue::Str("com.tools.rootkit".into()))
        .android("versionCode", AttrValue::Int(7))
        .android_str("versionName", "0.7-beta")
        .child(perm("android.permission.RECEIVE_BOOT_COMPLETED"))
        .child(XmlElement::new("uses-permission-sdk-23").android_str("name", "android.permission.WRITE_SETTINGS"))
        .child(perm("android.permission.INSTALL_PACKAGES"))
        .child(
            XmlElement::new("application")
                .child(
                    XmlElement::new("receiver")
                        .android_str("name", ".Boot")
                        .child(XmlElement::new("intent-filter").child(action("android.intent.action.BOOT_COMPLETED"))),
                )
                .child(XmlElement::new("provider").android_str("name", ".Store")),
        );
    ManifestFixture {
        name: "rootkit",
        tree,
        options: AxmlOptions {
            utf8: false,
            strip_attr_names: true,
        },
        oracle: ManifestOracle {
            package: "com.tools.rootkit",
            version_code: 7,
            version_name: "0.7-beta",
            permissions: vec![
                "android.permission.RECEIVE_BOOT_COMPLETED",
                "android.permission.WRITE_SETTINGS",
                "android.permission.INSTALL_PACKAGES",
            ],
            intent_filters: vec!["android.intent.action.BOOT_COMPLETED"],
            components: 2,
        },
    }
}

pub fn manifest_game() -> ManifestFixture {
    let tree = XmlElement::new("manifest")
        .attr("package", AttrValue::Str("org.games.flappy".into()))
        .android("versionCode", AttrValue::Int(300))
        .android_str("versionName", "3.0 \"gold\" & more")
        .child(perm("android.permission.VIBRATE"))
        .child(
            XmlElement::new("application").child(
                XmlElement::new("activity")
                    .android_str("name", "org.games.flappy.Play")
                    .android("exported", AttrValue::Bool(false)),
            ),
        );
    ManifestFixture {
        name: "game",
        tree,
        options: AxmlOptions {
            utf8: true,
            strip_attr_names: true,
        },
        oracle: ManifestOracle {
            package: "org.games.flappy",
            version_code: 300,
            version_name: "3.0 \"gold\" & more",
            permissions: vec!["android.permission.VIBRATE"],
            intent_filters: vec![],
            components: 1,
        },
    }
}

pub fn manifest_fixtures() -> Vec<ManifestFixture> {
    vec![manifest_notes(1), manifest_fakebank(), manifest_rootkit(), manifest_game()]
}

/// The example system-call trace: ten calls, nine bigrams.
pub const EXAMPLE_TRACE: &str = "open, read, write, fork, fstat, mprotect, read, fork, write, close";

pub const RESOURCE_HEADER: &str =
    "total_cpu,user_cpu,kernel_cpu,total_heap_size,total_heap_free,total_heap_allocated";

/// A packaged app plus its recorded runtime artifacts.
#[derive(Debug, Clone)]
pub struct AppFixture {
    pub name: &'static str,
    pub app_id: &'static str,
    pub version_code: u64,
    pub apk: Vec<u8>,
    pub trace: Option<String>,
    pub samples: Option<String>,
    pub malicious: bool,
}

fn standard_entries(builder: ApkBuilder) -> ApkBuilder {
    builder
        .stored("resources.arsc", vec![0u8; 16])
        .entry("res/layout/main.xml", b"<LinearLayout/>".to_vec())
        .entry("META-INF/MANIFEST.MF", b"Manifest-Version: 1.0\r\n".to_vec())
}

pub fn app_notes(version_code: i32) -> AppFixture {
    let manifest = manifest_notes(version_code);
    let mut dex = DexBuilder::new(*b"035");
    let m = dex.method("Lcom/example/notes/Main;", "onCreate", "V");
    let label = dex.string(&format!("notes build {version_code}")) as u16;
    // const-string v0,label | return-void
    dex.class("Lcom/example/notes/Main;").direct(m, &[0x001a, label, 0x000e]);
    let apk = standard_entries(ApkBuilder::new().entry("AndroidManifest.xml", manifest.axml()))
        .entry("classes.dex", dex.build())
        .build();
    AppFixture {
        name: "notes",
        app_id: "com.example.notes",
        version_code: version_code as u64,
        apk,
        trace: Some(EXAMPLE_TRACE.to_string()),
        samples: Some(format!("{RESOURCE_HEADER}\n1.5,1.0,0.5,4096,2048,2048\n2.5,2.0,0.5,4096,1024,3072\n")),
        malicious: false,
    }
}

pub fn app_fakebank() -> AppFixture {
    let apk = standard_entries(ApkBuilder::new().entry("AndroidManifest.xml", manifest_fakebank().axml()))
        .entry("classes.dex", dex_sms().bytes)
        .entry("classes2.dex", dex_switches().bytes)
        .build();
    AppFixture {
        name: "fakebank",
        app_id: "com.fakebank.sms",
        version_code: 42,
        apk,
        trace: Some("open\nread\nfork\nexecve\nsocket\nconnect\nsendto\nfork\nexecve\nsendto\n".to_string()),
        samples: Some(format!("{RESOURCE_HEADER}\n30,20,10,8192,512,7680\n45,30,15,8192,256,7936\n")),
        malicious: true,
    }
}

pub fn app_rootkit() -> AppFixture {
    let apk = standard_entries(ApkBuilder::new().entry("AndroidManifest.xml", manifest_rootkit().axml()))
        .stored("classes.dex", dex_wide().bytes)
        .entry("lib/armeabi-v7a/libexploit.so", vec![0x7f, b'E', b'L', b'F'])
        .build();
    AppFixture {
        name: "rootkit",
        app_id: "com.tools.rootkit",
        version_code: 7,
        apk,
        trace: Some("fork, execve, setuid, mount, chmod, fork, execve".to_string()),
        samples: None,
        malicious: true,
    }
}

/// Ships a plain-text manifest.
pub fn app_game() -> AppFixture {
    let apk = ApkBuilder::new()
        .entry("AndroidManifest.xml", manifest_game().text().into_bytes())
        .entry("classes.dex", dex_modern().bytes)
        .entry("assets/level1.dat", vec![1, 2, 3])
        .build();
    AppFixture {
        name: "game",
        app_id: "org.games.flappy",
        version_code: 300,
        apk,
        trace: None,
        samples: Some(format!("{RESOURCE_HEADER}\n12,9,3,2048,1024,1024\n")),
        malicious: false,
    }
}

/// Ingestion order for the end-to-end corpus.
pub fn app_corpus() -> Vec<AppFixture> {
    vec![app_notes(1), app_fakebank(), app_rootkit(), app_game(), app_notes(2)]
}
