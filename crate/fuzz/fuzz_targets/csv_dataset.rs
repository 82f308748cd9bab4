#![no_main]
use libfuzzer_sys::fuzz_target;
use noisecar::data::csv::{parse_csv, to_csv_string, ColumnRef, CsvOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for options in [
        CsvOptions::dataset_file(false),
        CsvOptions::dataset_file(true),
        CsvOptions::label(ColumnRef::Last),
    ] {
        if let Ok(ds) = parse_csv(text, &options) {
            let has_noisy = ds.noisy_labels.is_some();
            let again =
                parse_csv(&to_csv_string(&ds), &CsvOptions::dataset_file(has_noisy)).expect("written dataset parses");
            assert_eq!(again.clean_labels, ds.clean_labels);
            assert_eq!(again.noisy_labels, ds.noisy_labels);
        }
    }
});
