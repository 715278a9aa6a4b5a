#include "fedskd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fedskd/errors.hpp"
#include "fedskd/rng.hpp"

namespace fedskd {
namespace {

std::vector<std::vector<std::size_t>> rows_by_class(std::span<const int> labels, std::size_t classes) {
    std::vector<std::vector<std::size_t>> rows(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) rows[static_cast<std::size_t>(labels[i])].push_back(i);
    return rows;
}

std::size_t count_classes(std::span<const int> labels) {
    int mx = -1;
    for (int y : labels) {
        if (y < 0) throw DatasetError("dataset: negative label " + std::to_string(y));
        mx = std::max(mx, y);
    }
    return static_cast<std::size_t>(mx + 1);
}

// Places each class's shuffled rows into consecutive per-client blocks.
PartitionPlan place_counts(std::span<const int> labels, const std::vector<std::vector<std::size_t>>& counts,
                           std::size_t n_clients, CounterRng& rng, PartitionMethod method) {
    PartitionPlan plan;
    plan.n_clients = n_clients;
    plan.method = method;
    plan.assignment.assign(labels.size(), 0);
    auto rows = rows_by_class(labels, counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
        rng.shuffle(rows[c]);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < n_clients; ++k) {
            for (std::size_t j = 0; j < counts[c][k]; ++j) plan.assignment[rows[c][pos++]] = k;
        }
    }
    return plan;
}

std::vector<double> read_doubles(std::istream& is, std::size_t n, const std::string& where) {
    std::vector<double> v(n);
    for (auto& x : v) {
        if (!(is >> x)) throw DatasetError("array file " + where + ": expected " + std::to_string(n) + " values");
    }
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

std::size_t LabeledDataset::num_classes() const { return count_classes(labels); }

Shape LabeledDataset::sample_shape() const {
    const Shape& s = inputs.shape();
    return s.empty() ? Shape{} : Shape(s.begin() + 1, s.end());
}

void LabeledDataset::validate() const {
    if (labels.empty()) throw DatasetError("dataset: no samples");
    if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
        throw DatasetError("dataset: inputs " + shape_to_string(inputs.shape()) + " vs " + std::to_string(labels.size()) +
                           " labels");
    }
    if (has_attr() && sensitive_attr.size() != labels.size()) throw DatasetError("dataset: attribute length mismatch");
    if (has_sites() && site_labels.size() != labels.size()) throw DatasetError("dataset: site label length mismatch");
    for (int a : sensitive_attr) {
        if (a != 0 && a != 1) throw DatasetError("dataset: sensitive attribute must be binary");
    }
    count_classes(labels);
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
    LabeledDataset out;
    out.inputs = gather_rows(inputs, rows);
    for (auto r : rows) {
        out.labels.push_back(labels[r]);
        if (has_attr()) out.sensitive_attr.push_back(sensitive_attr[r]);
        if (has_sites()) out.site_labels.push_back(site_labels[r]);
    }
    return out;
}

std::vector<std::size_t> LabeledDataset::class_counts(std::size_t classes) const {
    std::vector<std::size_t> counts(classes, 0);
    for (int y : labels) {
        if (static_cast<std::size_t>(y) < classes) ++counts[static_cast<std::size_t>(y)];
    }
    return counts;
}

LabeledDataset concat(std::span<const LabeledDataset> parts) {
    LabeledDataset out;
    if (parts.empty()) return out;
    Shape shape = parts[0].inputs.shape();
    shape[0] = 0;
    std::vector<double> values;
    const bool attr = std::all_of(parts.begin(), parts.end(), [](const auto& p) { return p.has_attr(); });
    const bool sites = std::all_of(parts.begin(), parts.end(), [](const auto& p) { return p.has_sites(); });
    for (const auto& p : parts) {
        if (p.sample_shape() != parts[0].sample_shape()) throw DatasetError("concat: sample shapes differ");
        shape[0] += p.size();
        values.insert(values.end(), p.inputs.storage().begin(), p.inputs.storage().end());
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
        if (attr) out.sensitive_attr.insert(out.sensitive_attr.end(), p.sensitive_attr.begin(), p.sensitive_attr.end());
        if (sites) out.site_labels.insert(out.site_labels.end(), p.site_labels.begin(), p.site_labels.end());
    }
    out.inputs = Tensor(shape, std::move(values));
    return out;
}

std::string to_string(PartitionMethod method) {
    switch (method) {
        case PartitionMethod::dirichlet: return "dirichlet";
        case PartitionMethod::stratified: return "stratified";
        case PartitionMethod::iid: return "iid";
    }
    return "iid";
}

void PartitionPlan::validate(std::size_t n_samples) const {
    if (assignment.size() != n_samples) throw DatasetError("partition: plan covers a different number of samples");
    const auto sizes = client_sizes();
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        if (sizes[k] == 0) throw EmptyClientError("partition: client " + std::to_string(k) + " receives no samples");
    }
}

std::vector<std::size_t> PartitionPlan::client_sizes() const {
    std::vector<std::size_t> sizes(n_clients, 0);
    for (auto k : assignment) ++sizes.at(k);
    return sizes;
}

std::vector<std::size_t> PartitionPlan::rows_of(std::size_t client) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (assignment[i] == client) rows.push_back(i);
    }
    return rows;
}

std::vector<LabeledDataset> PartitionPlan::shards(const LabeledDataset& ds) const {
    validate(ds.size());
    std::vector<LabeledDataset> out;
    for (std::size_t k = 0; k < n_clients; ++k) {
        const auto rows = rows_of(k);
        out.push_back(ds.subset(rows));
    }
    return out;
}

std::vector<std::size_t> largest_remainder_counts(std::span<const double> proportions, std::size_t n) {
    const std::size_t k = proportions.size();
    std::vector<std::size_t> counts(k, 0);
    std::vector<double> remainder(k, 0.0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = proportions[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        remainder[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t j = 0; assigned < n; ++j, ++assigned) ++counts[order[j % k]];
    return counts;
}

PartitionPlan dirichlet_partition_labels(std::span<const int> labels, std::size_t n_classes, std::size_t n_clients,
                                         double alpha, std::uint64_t seed) {
    if (n_clients == 0) throw DatasetError("dirichlet partition: need at least one client");
    if (!(alpha > 0.0)) throw DatasetError("dirichlet partition: alpha must be positive");
    const auto rows = rows_by_class(labels, n_classes);
    CounterRng rng(seed);
    for (int attempt = 0; attempt < kDirichletRedraws; ++attempt) {
        std::vector<std::vector<std::size_t>> counts(n_classes);
        std::vector<std::size_t> totals(n_clients, 0);
        for (std::size_t c = 0; c < n_classes; ++c) {
            const auto p = rng.dirichlet(alpha, n_clients);
            counts[c] = largest_remainder_counts(p, rows[c].size());
            for (std::size_t k = 0; k < n_clients; ++k) totals[k] += counts[c][k];
        }
        if (std::all_of(totals.begin(), totals.end(), [](std::size_t t) { return t > 0; })) {
            return place_counts(labels, counts, n_clients, rng, PartitionMethod::dirichlet);
        }
    }
    throw EmptyClientError("dirichlet partition: a client stayed empty after " + std::to_string(kDirichletRedraws) +
                           " redraws (alpha=" + std::to_string(alpha) + ", clients=" + std::to_string(n_clients) + ")");
}

PartitionPlan dirichlet_partition(const LabeledDataset& ds, std::size_t n_clients, double alpha, std::uint64_t seed) {
    ds.validate();
    return dirichlet_partition_labels(ds.labels, ds.num_classes(), n_clients, alpha, seed);
}

PartitionPlan partition_by_proportions(std::span<const int> labels, const std::vector<std::vector<double>>& proportions,
                                       std::uint64_t seed) {
    const std::size_t classes = std::max(count_classes(labels), proportions.size());
    if (proportions.size() != classes || proportions.empty()) {
        throw DatasetError("partition: need one proportion vector per class");
    }
    const std::size_t n_clients = proportions[0].size();
    const auto rows = rows_by_class(labels, classes);
    std::vector<std::vector<std::size_t>> counts(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        if (proportions[c].size() != n_clients) throw DatasetError("partition: ragged proportion vectors");
        counts[c] = largest_remainder_counts(proportions[c], rows[c].size());
    }
    CounterRng rng(seed);
    auto plan = place_counts(labels, counts, n_clients, rng, PartitionMethod::dirichlet);
    plan.validate(labels.size());
    return plan;
}

PartitionPlan stratified_partition(const LabeledDataset& ds, const std::map<int, std::size_t>& site_to_client) {
    if (!ds.has_sites()) throw UnknownSiteError("stratified partition: dataset has no site labels");
    PartitionPlan plan;
    plan.method = PartitionMethod::stratified;
    for (const auto& [site, client] : site_to_client) plan.n_clients = std::max(plan.n_clients, client + 1);
    plan.assignment.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto it = site_to_client.find(ds.site_labels[i]);
        if (it == site_to_client.end()) {
            throw UnknownSiteError("stratified partition: site " + std::to_string(ds.site_labels[i]) + " has no client");
        }
        plan.assignment[i] = it->second;
    }
    return plan;
}

PartitionPlan iid_partition(std::size_t n_samples, std::size_t n_clients, std::uint64_t seed) {
    if (n_clients == 0 || n_samples < n_clients) {
        throw EmptyClientError("iid partition: " + std::to_string(n_samples) + " samples for " +
                               std::to_string(n_clients) + " clients");
    }
    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(seed);
    rng.shuffle(order);
    PartitionPlan plan{std::vector<std::size_t>(n_samples), n_clients, PartitionMethod::iid};
    for (std::size_t j = 0; j < n_samples; ++j) plan.assignment[order[j]] = j % n_clients;
    return plan;
}

TrainTestSplit stratified_split(const LabeledDataset& ds, double test_fraction, std::uint64_t seed) {
    ds.validate();
    auto rows = rows_by_class(ds.labels, ds.num_classes());
    CounterRng rng(seed);
    std::vector<std::size_t> train, test;
    for (auto& cls : rows) {
        rng.shuffle(cls);
        const std::size_t n = cls.size();
        auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(n)));
        if (n >= 2) n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
        else n_test = 0;
        test.insert(test.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(n_test));
        train.insert(train.end(), cls.begin() + static_cast<std::ptrdiff_t>(n_test), cls.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {ds.subset(train), ds.subset(test)};
}

std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw DatasetError("k-fold: need k >= 2");
    auto rows = rows_by_class(labels, count_classes(labels));
    CounterRng rng(seed);
    std::vector<std::size_t> fold(labels.size(), 0);
    for (auto& cls : rows) {
        rng.shuffle(cls);
        for (std::size_t j = 0; j < cls.size(); ++j) fold[cls[j]] = j % k;
    }
    return fold;
}

TrainTestSplit fold_split(const LabeledDataset& ds, std::size_t k, std::size_t fold, std::uint64_t seed) {
    ds.validate();
    const auto folds = stratified_folds(ds.labels, k, seed);
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == fold ? test : train).push_back(i);
    if (train.empty() || test.empty()) throw DatasetError("k-fold: empty train or test split");
    return {ds.subset(train), ds.subset(test)};
}

std::vector<LabeledDataset> make_synthetic_task(const SyntheticTaskSpec& spec) {
    if (spec.n_clients == 0 || spec.classes < 2 || spec.samples_per_client == 0) {
        throw DatasetError("synthetic task: need >= 1 client, >= 2 classes and >= 1 sample per client");
    }
    const Shape& in = spec.input_shape;
    if (in.size() != 3 && in.size() != 4) throw DatasetError("synthetic task: input shape must be (c, s1, s2[, s3])");
    const Shape spatial(in.begin() + 1, in.end());
    const std::size_t d = spatial.size();
    const std::size_t plane = shape_numel(spatial);
    const std::size_t channels = in[0];

    // Coordinates of every spatial position, normalized to [0, 1).
    std::vector<std::vector<double>> coords(plane, std::vector<double>(d));
    {
        std::vector<std::size_t> idx(d, 0);
        for (std::size_t p = 0; p < plane; ++p) {
            for (std::size_t a = 0; a < d; ++a) coords[p][a] = (static_cast<double>(idx[a]) + 0.5) / static_cast<double>(spatial[a]);
            for (std::size_t a = d; a-- > 0;) {
                if (++idx[a] < spatial[a]) break;
                idx[a] = 0;
            }
        }
    }
    auto blob = [&](const std::vector<double>& centre, double width) {
        std::vector<double> t(plane);
        for (std::size_t p = 0; p < plane; ++p) {
            double r2 = 0.0;
            for (std::size_t a = 0; a < d; ++a) r2 += (coords[p][a] - centre[a]) * (coords[p][a] - centre[a]);
            t[p] = std::exp(-r2 / (2.0 * width * width));
        }
        return t;
    };

    CounterRng tmpl_rng(derive_seed(spec.seed, SeedPurpose::data, 0));
    const double width = 0.15;
    std::vector<std::vector<double>> class_templates;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        std::vector<double> centre(d);
        for (auto& v : centre) v = 0.25 + 0.5 * tmpl_rng.uniform();
        class_templates.push_back(blob(centre, width));
    }
    std::vector<double> nuisance_centre(d);
    for (auto& v : nuisance_centre) v = 0.25 + 0.5 * tmpl_rng.uniform();
    const auto nuisance_template = blob(nuisance_centre, width);

    struct ClientTransform {
        double gain = 1.0;
        double offset = 0.0;
        std::vector<double> texture;
    };
    std::vector<ClientTransform> transforms;
    for (std::size_t k = 0; k < spec.n_clients; ++k) {
        CounterRng crng(derive_seed(spec.seed, SeedPurpose::data, 1 + k));
        ClientTransform t;
        t.gain = std::exp(spec.per_client_shift * crng.normal());
        t.offset = spec.per_client_shift * crng.normal();
        std::vector<double> freq(d);
        for (auto& f : freq) f = static_cast<double>(1 + crng.uniform_below(3));
        const double phase = 2.0 * std::numbers::pi * crng.uniform();
        t.texture.resize(plane);
        for (std::size_t p = 0; p < plane; ++p) {
            double arg = phase;
            for (std::size_t a = 0; a < d; ++a) arg += 2.0 * std::numbers::pi * freq[a] * coords[p][a];
            t.texture[p] = std::sin(arg);
        }
        transforms.push_back(std::move(t));
    }

    const std::size_t total = spec.n_clients * spec.samples_per_client;
    std::vector<int> labels(total), attrs(total);
    for (std::size_t i = 0; i < total; ++i) {
        labels[i] = static_cast<int>(i % spec.classes);
        attrs[i] = static_cast<int>((i / spec.classes) % 2);
    }
    const std::uint64_t part_seed = derive_seed(spec.seed, SeedPurpose::partition, 0);
    const PartitionPlan plan = spec.label_alpha > 0.0
                                   ? dirichlet_partition_labels(labels, spec.classes, spec.n_clients, spec.label_alpha, part_seed)
                                   : iid_partition(total, spec.n_clients, part_seed);

    CounterRng render(derive_seed(spec.seed, SeedPurpose::data, 1'000'000));
    std::vector<LabeledDataset> clients;
    for (std::size_t k = 0; k < spec.n_clients; ++k) {
        const auto rows = plan.rows_of(k);
        Shape shape{rows.size()};
        shape.insert(shape.end(), in.begin(), in.end());
        LabeledDataset ds;
        ds.inputs = Tensor(shape);
        const ClientTransform& tf = transforms[k];
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const int y = labels[rows[j]];
            const int a = attrs[rows[j]];
            const double amp = 0.5 + render.uniform();
            for (std::size_t c = 0; c < channels; ++c) {
                double* dst = ds.inputs.data() + (j * channels + c) * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    const double clean = spec.signal * amp * class_templates[static_cast<std::size_t>(y)][p] +
                                         spec.nuisance * a * nuisance_template[p] + spec.noise * render.normal();
                    dst[p] = tf.gain * clean + tf.offset + spec.per_client_shift * tf.texture[p];
                }
            }
            ds.labels.push_back(y);
            ds.sensitive_attr.push_back(a);
            ds.site_labels.push_back(static_cast<int>(k));
        }
        clients.push_back(std::move(ds));
    }
    return clients;
}

RegionMaskSet make_grid_region_masks(const Shape& spatial, const std::vector<std::size_t>& grid) {
    if (grid.size() != spatial.size()) {
        throw ShapeRankError("grid masks: grid " + shape_to_string(grid) + " vs spatial " + shape_to_string(spatial));
    }
    for (std::size_t a = 0; a < grid.size(); ++a) {
        if (grid[a] == 0 || grid[a] > spatial[a]) {
            throw EmptyRegionError("grid masks: grid " + shape_to_string(grid) + " does not tile " + shape_to_string(spatial));
        }
    }
    RegionMaskSet masks{spatial, std::vector<int>(shape_numel(spatial)), static_cast<int>(shape_numel(grid))};
    std::vector<std::size_t> idx(spatial.size(), 0);
    for (std::size_t flat = 0; flat < masks.assignments.size(); ++flat) {
        std::size_t region = 0;
        for (std::size_t a = 0; a < spatial.size(); ++a) region = region * grid[a] + idx[a] * grid[a] / spatial[a];
        masks.assignments[flat] = static_cast<int>(region + 1);
        for (std::size_t a = spatial.size(); a-- > 0;) {
            if (++idx[a] < spatial[a]) break;
            idx[a] = 0;
        }
    }
    masks.validate();
    return masks;
}

void save_array_file(const Tensor& sample, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw DatasetError("cannot write array file " + path.string());
    os << "shape";
    for (auto s : sample.shape()) os << ' ' << s;
    os << '\n';
    os.precision(17);
    for (std::size_t i = 0; i < sample.numel(); ++i) os << sample[i] << (i + 1 == sample.numel() ? '\n' : ' ');
}

LabeledDataset load_manifest_dataset(const std::filesystem::path& manifest) {
    std::ifstream is(manifest);
    if (!is) throw DatasetError("cannot open manifest " + manifest.string());
    std::string line;
    std::getline(is, line);
    const auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "path" || header[1] != "label" || header[2] != "attr" || header[3] != "site") {
        throw DatasetError(manifest.string() + ":1: header must be path,label,attr,site");
    }
    LabeledDataset ds;
    Shape sample_shape;
    std::vector<double> values;
    std::size_t line_no = 1;
    bool attr_seen = false, attr_missing = false, site_seen = false, site_missing = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        const std::string where = manifest.string() + ":" + std::to_string(line_no);
        if (cells.size() < 4) throw DatasetError(where + ": expected 4 columns");
        std::ifstream arr(manifest.parent_path() / cells[0]);
        if (!arr) throw DatasetError(where + ": cannot open array file " + cells[0]);
        std::string tag;
        std::getline(arr, line);
        std::istringstream hs(line);
        hs >> tag;
        Shape shape;
        for (std::size_t s; hs >> s;) shape.push_back(s);
        if (tag != "shape" || (shape.size() != 3 && shape.size() != 4)) throw DatasetError(where + ": bad array header");
        if (sample_shape.empty()) sample_shape = shape;
        if (shape != sample_shape) throw DatasetError(where + ": sample shape differs from first sample");
        const auto v = read_doubles(arr, shape_numel(shape), cells[0]);
        values.insert(values.end(), v.begin(), v.end());
        try {
            ds.labels.push_back(std::stoi(cells[1]));
            if (cells[2].empty()) attr_missing = true;
            else { attr_seen = true; ds.sensitive_attr.push_back(std::stoi(cells[2])); }
            if (cells[3].empty()) site_missing = true;
            else { site_seen = true; ds.site_labels.push_back(std::stoi(cells[3])); }
        } catch (const std::logic_error&) {
            throw DatasetError(where + ": non-integer label/attr/site");
        }
    }
    if ((attr_seen && attr_missing) || (site_seen && site_missing)) {
        throw DatasetError(manifest.string() + ": attr/site must be given for every row or for none");
    }
    Shape shape{ds.labels.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    ds.inputs = Tensor(shape, std::move(values));
    ds.validate();
    return ds;
}

}  // namespace fedskd
