use strobe_core::tagfmt::{read_tags, write_tags, TagFileHeader};
use strobe_core::{Channel, Station, TimeTag};

/// The example dump in docs/tagfmt.md.
const EXAMPLE: [u8; 72] = [
    0x42, 0x53, 0x54, 0x52, 0x4f, 0x42, 0x45, 0x31, 0x01, 0x00, 0x01, 0x00, 0x01, 0x00, 0x00, 0x00, //
    0x02, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, //
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x03, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, //
    0x40, 0x42, 0x0f, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, //
    0xe2, 0x21, 0x10, 0x00, 0x00, 0x00, 0x00, 0x00,
];

#[test]
fn documented_example_round_trips() {
    let tags = [
        TimeTag::new(Channel::Trigger, 1_000_000),
        TimeTag::new(Channel::DetPlus, 1_057_250),
    ];
    let mut out = Vec::new();
    let n = write_tags(&TagFileHeader::new(Station::B, 2), &tags, &mut out).unwrap();
    assert_eq!(n, 72);
    assert_eq!(out, EXAMPLE);
    let (h, r) = read_tags(&EXAMPLE[..]).unwrap();
    assert_eq!(h.station, Station::B);
    assert_eq!(r.collect::<Result<Vec<_>, _>>().unwrap(), tags);
}
