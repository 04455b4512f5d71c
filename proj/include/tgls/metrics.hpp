#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgls/text.hpp"

namespace tgls {

struct BleuConfig {
    int max_order = 4;
    // Add-epsilon smoothing replaces zero match counts by epsilon; orders
    // with matches keep their exact counts.
    bool smoothing = true;
    double epsilon = 0.1;
    bool use_brevity_penalty = true;
};

// Sentence BLEU: geometric mean of clipped n-gram precisions over the orders
// the candidate actually has n-grams for, times the brevity penalty
// exp(1 - r/c) when c < r. r is the reference length closest to c (ties
// resolved toward the shorter reference). Empty candidate scores 0.
double bleu(const Sentence& candidate, const std::vector<Sentence>& references,
            const BleuConfig& cfg = {});

// Corpus BLEU pools matched and total counts per order across all pairs
// before the geometric mean; lengths are pooled the same way.
double corpus_bleu(const std::vector<Sentence>& candidates,
                   const std::vector<std::vector<Sentence>>& references,
                   const BleuConfig& cfg = {});

// alpha_ib * BLEU(candidate, references) - (1 - alpha_ib) * BLEU(candidate,
// [source]): rewards reference overlap, penalizes copying the source.
double ibleu(const Sentence& candidate, const std::vector<Sentence>& references,
             const Sentence& source, double alpha_ib = 0.9, const BleuConfig& cfg = {});

// 2ab/(a+b), 0 when a+b=0. Inputs must be non-negative.
double h_mean(double a, double b);
// sqrt(ab). Inputs must be non-negative.
double g_mean(double a, double b);

struct SampleMetrics {
    int index = 0;
    std::string output;
    double total_score = 0.0;
    double bleu = 0.0;
    double ibleu = 0.0;
    double self_bleu = 0.0;
    double formality = 0.0;
};

struct MetricReport {
    std::string task;
    double bleu = 0.0;
    double ibleu = 0.0;
    double self_bleu = 0.0;
    double formality_accuracy = 0.0;
    double h_mean = 0.0;
    double g_mean = 0.0;
    double perplexity = 1.0;
    double mean_total_score = 0.0;
    std::vector<SampleMetrics> rows;

    // One summary JSON object, then one object per sample, newline-separated.
    std::string to_json_lines() const;
};

}  // namespace tgls
