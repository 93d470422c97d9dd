//! Butcher tableaus for the explicit schemes.

pub(crate) struct Tableau {
    pub a: &'static [&'static [f64]],
    pub b: &'static [f64],
    pub c: &'static [f64],
}

pub(crate) const EULER: Tableau = Tableau {
    a: &[&[]],
    b: &[1.0],
    c: &[0.0],
};

pub(crate) const RK4: Tableau = Tableau {
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    c: &[0.0, 0.5, 0.5, 1.0],
};

/// Tsitouras 5(4). The seventh stage is the FSAL evaluation at the new
/// point and only enters the embedded error estimate.
pub(crate) const TSIT5: Tableau = Tableau {
    a: &[
        &[],
        &[0.161],
        &[-0.008480655492356989, 0.335480655492357],
        &[2.897153057105493, -6.359448489975075, 4.3622954328695815],
        &[
            5.325864828439257,
            -11.748883564062828,
            7.4955393428898365,
            -0.09249506636175525,
        ],
        &[
            5.86145544294642,
            -12.92096931784711,
            8.159367898576159,
            -0.071584973281401,
            -0.028269050394068383,
        ],
        &[
            0.09646076681806523,
            0.01,
            0.4798896504144996,
            1.379008574103742,
            -3.290069515436081,
            2.324710524099774,
        ],
    ],
    b: &[
        0.09646076681806523,
        0.01,
        0.4798896504144996,
        1.379008574103742,
        -3.290069515436081,
        2.324710524099774,
        0.0,
    ],
    c: &[0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0],
};

/// Difference between the 5th- and 4th-order weights.
pub(crate) const TSIT5_BTILDE: [f64; 7] = [
    -0.00178001105222577714,
    -0.0008164344596567469,
    0.007880878010261995,
    -0.1447110071732629,
    0.5823571654525552,
    -0.45808210592918697,
    1.0 / 66.0,
];

#[cfg(test)]
mod tests {
    use super::*;

    fn check_consistency(t: &Tableau) {
        let s: f64 = t.b.iter().sum();
        assert!((s - 1.0).abs() < 1e-14, "b sums to {s}");
        for (i, row) in t.a.iter().enumerate() {
            let r: f64 = row.iter().sum();
            assert!((r - t.c[i]).abs() < 1e-12, "row {i}: {r} vs {}", t.c[i]);
        }
    }

    #[test]
    fn row_sums_match_nodes() {
        check_consistency(&EULER);
        check_consistency(&RK4);
        check_consistency(&TSIT5);
        // The embedded weights must preserve consistency as well.
        let s: f64 = TSIT5_BTILDE.iter().sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn tsit5_second_order_condition() {
        let s: f64 = TSIT5.b.iter().zip(TSIT5.c).map(|(b, c)| b * c).sum();
        assert!((s - 0.5).abs() < 1e-12);
    }
}
