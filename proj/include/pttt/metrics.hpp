#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pttt/tensor.hpp"

namespace pttt {

// Per-instance evaluation result. Distance metrics are undefined when either
// mask is empty; sensitivity is undefined when the ground truth is empty.
struct MetricsRecord {
    int anatomy_label = 0;
    int frame_index = 0;
    double dsc = 0.0;
    double hd95 = 0.0;
    double asd = 0.0;
    double sensitivity = 0.0;
    bool distances_defined = true;
    bool sensitivity_defined = true;
};

BinaryMask binarize(const MaskProb& prob, double threshold = 0.5);  // >= threshold -> 1

// 2|P∩G| / (|P| + |G|); both masks empty -> 1 by convention.
double dsc(const BinaryMask& pred, const BinaryMask& gt);

// |P∩G| / |G|; empty ground truth -> nullopt.
std::optional<double> sensitivity(const BinaryMask& pred, const BinaryMask& gt);

// Boundary pixels: 4-connectivity erosion difference, out-of-image treated as
// background. Distances are Euclidean between pixel centers.
BinaryMask boundary_pixels(const BinaryMask& mask);

struct SurfaceDistances {
    std::vector<double> a_to_b;  // nearest-boundary distance per boundary pixel of a
    std::vector<double> b_to_a;
};

// nullopt when either mask is empty (undefined-metric signal).
std::optional<SurfaceDistances> surface_distances(const BinaryMask& a, const BinaryMask& b);

// Linear-interpolation percentile of the pooled bidirectional distance list.
std::optional<double> hd95(const BinaryMask& a, const BinaryMask& b);
// Mean of the pooled bidirectional distances.
std::optional<double> asd(const BinaryMask& a, const BinaryMask& b);

// rank = p/100 * (n-1), linear interpolation between the neighbouring order
// statistics; input must be sorted ascending.
double percentile_sorted(const std::vector<double>& sorted, double p);

MetricsRecord evaluate_instance(const MaskProb& pred, const BinaryMask& gt, int anatomy_label,
                                int frame_index, double threshold = 0.5);

struct AnatomyAggregate {
    int anatomy_label = 0;
    int count = 0;           // records contributing to dsc mean
    int undefined_count = 0; // records excluded from distance means
    double dsc = 0.0, hd95 = 0.0, asd = 0.0, sensitivity = 0.0;
};

struct MetricsSummary {
    std::vector<AnatomyAggregate> per_anatomy;  // ordered by label
    AnatomyAggregate overall;                   // anatomy_label 0
};

// Means per anatomy plus an overall row; undefined records are excluded from
// the affected means and counted. Throws ConfigError on an empty record set.
MetricsSummary aggregate_records(const std::vector<MetricsRecord>& records);

}  // namespace pttt
