//! Published full-scale results, kept for side-by-side display in reports.
//!
//! Nothing here feeds a pass/fail decision; desk-scale runs are not comparable.

use std::sync::OnceLock;

/// Column label used wherever these values are shown.
pub const LABEL: &str = "published reference (not comparable at desk scale)";

/// `variant blocks dataset metric value`; blocks 0 marks a non-sequential baseline.
const DATA: &str = "\
hstu 2 ML-1M HR@10 0.2923
hstu 2 ML-1M NDCG@10 0.1628
hstu 2 ML-1M MRR 0.1395
hstu 2 ML-20M HR@10 0.2915
hstu 2 ML-20M NDCG@10 0.1642
hstu 2 ML-20M MRR 0.1409
hstu 2 AMZ-Books HR@10 0.0564
hstu 2 AMZ-Books NDCG@10 0.0308
hstu 2 AMZ-Books MRR 0.0279
hstu 4 ML-1M HR@10 0.3115
hstu 4 ML-1M NDCG@10 0.1778
hstu 4 ML-1M MRR 0.1529
hstu 4 ML-20M HR@10 0.3218
hstu 4 ML-20M NDCG@10 0.1849
hstu 4 ML-20M MRR 0.1582
hstu 4 AMZ-Books HR@10 0.0617
hstu 4 AMZ-Books NDCG@10 0.0338
hstu 4 AMZ-Books MRR 0.0305
hstu 8 ML-1M HR@10 0.3299
hstu 8 ML-1M NDCG@10 0.1857
hstu 8 ML-1M MRR 0.1572
hstu 8 ML-20M HR@10 0.3403
hstu 8 ML-20M NDCG@10 0.1990
hstu 8 ML-20M MRR 0.1709
hstu 8 AMZ-Books HR@10 0.0649
hstu 8 AMZ-Books NDCG@10 0.0357
hstu 8 AMZ-Books MRR 0.0322
hstu 16 ML-1M HR@10 0.3322
hstu 16 ML-1M NDCG@10 0.1887
hstu 16 ML-1M MRR 0.1601
hstu 16 ML-20M HR@10 0.3520
hstu 16 ML-20M NDCG@10 0.2079
hstu 16 ML-20M MRR 0.1787
hstu 16 AMZ-Books HR@10 0.0680
hstu 16 AMZ-Books NDCG@10 0.0377
hstu 16 AMZ-Books MRR 0.0340
hstu 32 ML-1M HR@10 0.3298
hstu 32 ML-1M NDCG@10 0.1863
hstu 32 ML-1M MRR 0.1580
hstu 32 ML-20M HR@10 0.3569
hstu 32 ML-20M NDCG@10 0.2113
hstu 32 ML-20M MRR 0.1814
hstu 32 AMZ-Books HR@10 0.0584
hstu 32 AMZ-Books NDCG@10 0.0325
hstu 32 AMZ-Books MRR 0.0295
llama 2 ML-1M HR@10 0.3029
llama 2 ML-1M NDCG@10 0.1697
llama 2 ML-1M MRR 0.1450
llama 2 ML-20M HR@10 0.3044
llama 2 ML-20M NDCG@10 0.1724
llama 2 ML-20M MRR 0.1475
llama 2 AMZ-Books HR@10 0.0510
llama 2 AMZ-Books NDCG@10 0.0275
llama 2 AMZ-Books MRR 0.0252
llama 4 ML-1M HR@10 0.3153
llama 4 ML-1M NDCG@10 0.1796
llama 4 ML-1M MRR 0.1539
llama 4 ML-20M HR@10 0.3277
llama 4 ML-20M NDCG@10 0.1887
llama 4 ML-20M MRR 0.1615
llama 4 AMZ-Books HR@10 0.0537
llama 4 AMZ-Books NDCG@10 0.0292
llama 4 AMZ-Books MRR 0.0266
llama 8 ML-1M HR@10 0.3232
llama 8 ML-1M NDCG@10 0.1848
llama 8 ML-1M MRR 0.1583
llama 8 ML-20M HR@10 0.3449
llama 8 ML-20M NDCG@10 0.2008
llama 8 ML-20M MRR 0.1718
llama 8 AMZ-Books HR@10 0.0547
llama 8 AMZ-Books NDCG@10 0.0296
llama 8 AMZ-Books MRR 0.0269
llama 16 ML-1M HR@10 0.3298
llama 16 ML-1M NDCG@10 0.1872
llama 16 ML-1M MRR 0.1594
llama 16 ML-20M HR@10 0.3495
llama 16 ML-20M NDCG@10 0.2055
llama 16 ML-20M MRR 0.1764
llama 16 AMZ-Books HR@10 0.0227
llama 16 AMZ-Books NDCG@10 0.0117
llama 16 AMZ-Books MRR 0.0112
llama 32 ML-1M HR@10 0.3299
llama 32 ML-1M NDCG@10 0.1896
llama 32 ML-1M MRR 0.1626
llama 32 ML-20M HR@10 0.3551
llama 32 ML-20M NDCG@10 0.2090
llama 32 ML-20M MRR 0.1791
llama 32 AMZ-Books HR@10 0.0210
llama 32 AMZ-Books NDCG@10 0.0110
llama 32 AMZ-Books MRR 0.0107
gpt 2 ML-1M HR@10 0.2798
gpt 2 ML-1M NDCG@10 0.1564
gpt 2 ML-1M MRR 0.1343
gpt 2 ML-20M HR@10 0.2419
gpt 2 ML-20M NDCG@10 0.1333
gpt 2 ML-20M MRR 0.1155
gpt 2 AMZ-Books HR@10 0.0568
gpt 2 AMZ-Books NDCG@10 0.0307
gpt 2 AMZ-Books MRR 0.0279
gpt 4 ML-1M HR@10 0.2803
gpt 4 ML-1M NDCG@10 0.1543
gpt 4 ML-1M MRR 0.1319
gpt 4 ML-20M HR@10 0.0284
gpt 4 ML-20M NDCG@10 0.0148
gpt 4 ML-20M MRR 0.0162
gpt 4 AMZ-Books HR@10 0.0356
gpt 4 AMZ-Books NDCG@10 0.0191
gpt 4 AMZ-Books MRR 0.0180
gpt 8 ML-1M HR@10 0.0353
gpt 8 ML-1M NDCG@10 0.0162
gpt 8 ML-1M MRR 0.0178
gpt 8 ML-20M HR@10 0.0302
gpt 8 ML-20M NDCG@10 0.0147
gpt 8 ML-20M MRR 0.0151
gpt 8 AMZ-Books HR@10 0.0049
gpt 8 AMZ-Books NDCG@10 0.0026
gpt 8 AMZ-Books MRR 0.0032
gpt 16 ML-1M HR@10 0.0270
gpt 16 ML-1M NDCG@10 0.0133
gpt 16 ML-1M MRR 0.0162
gpt 16 ML-20M HR@10 0.0264
gpt 16 ML-20M NDCG@10 0.0127
gpt 16 ML-20M MRR 0.0138
gpt 16 AMZ-Books HR@10 0.0050
gpt 16 AMZ-Books NDCG@10 0.0026
gpt 16 AMZ-Books MRR 0.0032
gpt 32 ML-1M HR@10 0.0247
gpt 32 ML-1M NDCG@10 0.0115
gpt 32 ML-1M MRR 0.0140
gpt 32 ML-20M HR@10 0.0312
gpt 32 ML-20M NDCG@10 0.0145
gpt 32 ML-20M MRR 0.0150
gpt 32 AMZ-Books HR@10 0.0058
gpt 32 AMZ-Books NDCG@10 0.0029
gpt 32 AMZ-Books MRR 0.0033
sasrec 2 ML-1M HR@10 0.2824
sasrec 2 ML-1M NDCG@10 0.1594
sasrec 2 ML-1M MRR 0.1375
sasrec 2 ML-20M HR@10 0.2781
sasrec 2 ML-20M NDCG@10 0.1553
sasrec 2 ML-20M MRR 0.1330
sasrec 2 AMZ-Books HR@10 0.0561
sasrec 2 AMZ-Books NDCG@10 0.0305
sasrec 2 AMZ-Books MRR 0.0276
sasrec 4 ML-1M HR@10 0.2744
sasrec 4 ML-1M NDCG@10 0.1543
sasrec 4 ML-1M MRR 0.1335
sasrec 4 ML-20M HR@10 0.0599
sasrec 4 ML-20M NDCG@10 0.0294
sasrec 4 ML-20M MRR 0.0284
sasrec 4 AMZ-Books HR@10 0.0544
sasrec 4 AMZ-Books NDCG@10 0.0300
sasrec 4 AMZ-Books MRR 0.0272
sasrec 8 ML-1M HR@10 0.2183
sasrec 8 ML-1M NDCG@10 0.1186
sasrec 8 ML-1M MRR 0.1030
sasrec 8 ML-20M HR@10 0.0326
sasrec 8 ML-20M NDCG@10 0.0156
sasrec 8 ML-20M MRR 0.0169
sasrec 8 AMZ-Books HR@10 0.0084
sasrec 8 AMZ-Books NDCG@10 0.0042
sasrec 8 AMZ-Books MRR 0.0043
sasrec 16 ML-1M HR@10 0.0431
sasrec 16 ML-1M NDCG@10 0.0184
sasrec 16 ML-1M MRR 0.0176
sasrec 16 ML-20M HR@10 0.0349
sasrec 16 ML-20M NDCG@10 0.0167
sasrec 16 ML-20M MRR 0.0177
sasrec 16 AMZ-Books HR@10 0.0095
sasrec 16 AMZ-Books NDCG@10 0.0044
sasrec 16 AMZ-Books MRR 0.0042
sasrec 32 ML-1M HR@10 0.0366
sasrec 32 ML-1M NDCG@10 0.0181
sasrec 32 ML-1M MRR 0.0195
sasrec 32 ML-20M HR@10 0.0301
sasrec 32 ML-20M NDCG@10 0.0159
sasrec 32 ML-20M MRR 0.0169
sasrec 32 AMZ-Books HR@10 0.0084
sasrec 32 AMZ-Books NDCG@10 0.0044
sasrec 32 AMZ-Books MRR 0.0045
din 0 ML-1M AUC 0.7241
din 0 ML-1M Logloss 0.6141
din 0 ML-20M AUC 0.7247
din 0 ML-20M Logloss 0.6135
din 0 AMZ-Books AUC 0.7060
din 0 AMZ-Books Logloss 0.4562
hstu 2 ML-1M AUC 0.7559
hstu 2 ML-1M Logloss 0.5814
hstu 2 ML-20M AUC 0.7813
hstu 2 ML-20M Logloss 0.5539
hstu 2 AMZ-Books AUC 0.7257
hstu 2 AMZ-Books Logloss 0.4608
hstu 4 ML-1M AUC 0.7530
hstu 4 ML-1M Logloss 0.5821
hstu 4 ML-20M AUC 0.7920
hstu 4 ML-20M Logloss 0.5422
hstu 4 AMZ-Books AUC 0.7386
hstu 4 AMZ-Books Logloss 0.4682
hstu 8 ML-1M AUC 0.7591
hstu 8 ML-1M Logloss 0.5772
hstu 8 ML-20M AUC 0.7960
hstu 8 ML-20M Logloss 0.5394
hstu 8 AMZ-Books AUC 0.7283
hstu 8 AMZ-Books Logloss 0.5134
hstu 16 ML-1M AUC 0.7943
hstu 16 ML-1M Logloss 0.5318
hstu 16 ML-20M AUC 0.7879
hstu 16 ML-20M Logloss 0.5463
hstu 16 AMZ-Books AUC 0.7442
hstu 16 AMZ-Books Logloss 0.5089
hstu 24 ML-1M AUC 0.7943
hstu 24 ML-1M Logloss 0.5307
hstu 24 ML-20M AUC 0.7992
hstu 24 ML-20M Logloss 0.5360
hstu 24 AMZ-Books AUC 0.7450
hstu 24 AMZ-Books Logloss 0.4496
hstu 32 ML-1M AUC 0.7947
hstu 32 ML-1M Logloss 0.5341
hstu 32 ML-20M AUC 0.7914
hstu 32 ML-20M Logloss 0.5416
hstu 32 AMZ-Books AUC 0.7606
hstu 32 AMZ-Books Logloss 0.4140
llama 2 ML-1M AUC 0.7922
llama 2 ML-1M Logloss 0.5403
llama 2 ML-20M AUC 0.7568
llama 2 ML-20M Logloss 0.5878
llama 2 AMZ-Books AUC 0.7181
llama 2 AMZ-Books Logloss 0.5175
llama 4 ML-1M AUC 0.7923
llama 4 ML-1M Logloss 0.5592
llama 4 ML-20M AUC 0.7595
llama 4 ML-20M Logloss 0.5732
llama 4 AMZ-Books AUC 0.7585
llama 4 AMZ-Books Logloss 0.4183
llama 8 ML-1M AUC 0.7939
llama 8 ML-1M Logloss 0.5454
llama 8 ML-20M AUC 0.7375
llama 8 ML-20M Logloss 0.5940
llama 8 AMZ-Books AUC 0.7449
llama 8 AMZ-Books Logloss 0.4868
llama 16 ML-1M AUC 0.7915
llama 16 ML-1M Logloss 0.5422
llama 16 ML-20M AUC 0.6390
llama 16 ML-20M Logloss 0.6790
llama 16 AMZ-Books AUC 0.7469
llama 16 AMZ-Books Logloss 0.4896
llama 24 ML-1M AUC 0.7883
llama 24 ML-1M Logloss 0.5495
llama 24 ML-20M AUC 0.5777
llama 24 ML-20M Logloss 0.6738
llama 24 AMZ-Books AUC 0.7517
llama 24 AMZ-Books Logloss 0.4250
llama 32 ML-1M AUC 0.7923
llama 32 ML-1M Logloss 0.5453
llama 32 ML-20M AUC 0.7107
llama 32 ML-20M Logloss 0.6127
llama 32 AMZ-Books AUC 0.7491
llama 32 AMZ-Books Logloss 0.4653
hstu;bias_kind=rel_pos_time 8 ML-20M HR@10 0.3376
hstu;bias_kind=rel_pos_time 8 ML-20M NDCG@10 0.1967
hstu;bias_kind=rel_time_only 8 ML-20M HR@10 0.3356
hstu;bias_kind=rel_time_only 8 ML-20M NDCG@10 0.1952
hstu;bias_kind=rel_pos_only 8 ML-20M HR@10 0.3122
hstu;bias_kind=rel_pos_only 8 ML-20M NDCG@10 0.1787
hstu;bias_kind=rope 8 ML-20M HR@10 0.3149
hstu;bias_kind=rope 8 ML-20M NDCG@10 0.1801
hstu;bias_kind=none 8 ML-20M HR@10 0.3083
hstu;bias_kind=none 8 ML-20M NDCG@10 0.1756
hstu;activation=silu 8 ML-20M HR@10 0.3376
hstu;activation=silu 8 ML-20M NDCG@10 0.1967
hstu;activation=softmax 8 ML-20M HR@10 0.3298
hstu;activation=softmax 8 ML-20M NDCG@10 0.1897
";

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEntry {
    pub variant: &'static str,
    pub blocks: usize,
    pub dataset: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

pub fn entries() -> &'static [ReferenceEntry] {
    static TABLE: OnceLock<Vec<ReferenceEntry>> = OnceLock::new();
    TABLE.get_or_init(|| {
        DATA.lines()
            .map(|l| {
                let f: Vec<&'static str> = l.split(' ').collect();
                ReferenceEntry {
                    variant: f[0],
                    blocks: f[1].parse().expect("reference blocks"),
                    dataset: f[2],
                    metric: f[3],
                    value: f[4].parse().expect("reference value"),
                }
            })
            .collect()
    })
}

/// Case-insensitive on variant and dataset, exact on blocks and metric.
pub fn lookup(variant: &str, blocks: usize, dataset: &str, metric: &str) -> Option<f64> {
    entries()
        .iter()
        .find(|e| {
            e.variant.eq_ignore_ascii_case(variant)
                && e.blocks == blocks
                && e.dataset.eq_ignore_ascii_case(dataset)
                && e.metric == metric
        })
        .map(|e| e.value)
}

pub fn datasets() -> Vec<&'static str> {
    let mut d: Vec<&'static str> = entries().iter().map(|e| e.dataset).collect();
    d.sort_unstable();
    d.dedup();
    d
}
