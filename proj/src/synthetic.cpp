// SPDX-License-Identifier: Apache-2.0
#include "dropreg/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dropreg/rng.hpp"

namespace dropreg
{

void SyntheticSpec::validate() const
{
    if (n_train < 1 || n_val < 1)
        throw std::invalid_argument("synthetic: counts must be at least 1");
    if (d < 1)
        throw std::invalid_argument("synthetic: d must be at least 1");
    if (c < 2)
        throw std::invalid_argument("synthetic: need at least two classes");
    if (!(label_noise >= 0.0 && label_noise < 1.0))
        throw std::invalid_argument("synthetic: label noise must lie in [0, 1)");
    if (!std::isfinite(separation) || separation < 0)
        throw std::invalid_argument("synthetic: separation must be finite and >= 0");
}

nlohmann::ordered_json to_json(SyntheticSpec const& s)
{
    return {{"n_train", s.n_train},
            {"n_val", s.n_val},
            {"d", s.d},
            {"c", s.c},
            {"separation", s.separation},
            {"label_noise", s.label_noise},
            {"seed", s.seed}};
}

SyntheticSpec synthetic_from_json(nlohmann::json const& j, SyntheticSpec base)
{
    base.n_train = j.value("n_train", base.n_train);
    base.n_val = j.value("n_val", base.n_val);
    base.d = j.value("d", base.d);
    base.c = j.value("c", base.c);
    base.separation = j.value("separation", base.separation);
    base.label_noise = j.value("label_noise", base.label_noise);
    base.seed = j.value("seed", base.seed);
    return base;
}

namespace
{
Dataset draw_split(SyntheticSpec const& spec,
                   Tensor const& centers,
                   RngStream const& root,
                   std::uint64_t tag,
                   std::size_t n,
                   double noise)
{
    Dataset out;
    out.features = Tensor::matrix(n, spec.d);
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        RngStream s = root.split({tag, i});
        auto y = s.uniform_index(spec.c);
        for (std::size_t k = 0; k < spec.d; ++k)
            out.features(i, k) = centers(y, k) + s.normal();
        if (noise > 0 && s.uniform() < noise)
            y = s.uniform_index(spec.c);
        out.labels[i] = y;
    }
    return out;
}
}  // namespace

SyntheticData gen_synthetic(SyntheticSpec const& spec)
{
    spec.validate();
    RngStream root(spec.seed);
    RngStream cs = root.split(0);
    Tensor centers = Tensor::matrix(spec.c, spec.d);
    double scale = spec.separation / std::sqrt(static_cast<double>(spec.d));
    for (auto& v : centers.data())
        v = scale * cs.normal();
    SyntheticData out;
    out.train = draw_split(spec, centers, root, 1, spec.n_train, spec.label_noise);
    out.val = draw_split(spec, centers, root, 2, spec.n_val, 0.0);
    return out;
}

void write_csv(Dataset const& data, std::string const& path)
{
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot write " + path);
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t k = 0; k < data.dim(); ++k)
        os << "f" << k << ",";
    os << "label\n";
    for (std::size_t i = 0; i < data.size(); ++i)
    {
        for (std::size_t k = 0; k < data.dim(); ++k)
            os << data.features(i, k) << ",";
        os << data.labels[i] << "\n";
    }
}

Dataset read_csv(std::string const& path)
{
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot read " + path);
    std::string line;
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> labels;
    std::size_t width = 0;
    bool header = true;
    while (std::getline(is, line))
    {
        if (line.empty())
            continue;
        if (header)
        {
            header = false;
            std::size_t used = 0;
            auto first = line.substr(0, line.find(','));
            try
            {
                std::stod(first, &used);
            }
            catch (std::exception const&)
            {
                continue;
            }
            if (used != first.size())
                continue;
        }
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            vals.push_back(std::stod(cell));
        if (vals.size() < 2)
            throw std::runtime_error(path + ": rows need features and a label");
        if (width == 0)
            width = vals.size();
        if (vals.size() != width)
            throw std::runtime_error(path + ": ragged rows");
        double y = vals.back();
        if (y < 0 || y != std::floor(y))
            throw std::runtime_error(path + ": label must be a non-negative integer");
        labels.push_back(static_cast<std::size_t>(y));
        vals.pop_back();
        rows.push_back(std::move(vals));
    }
    if (rows.empty())
        throw std::runtime_error(path + ": no data rows");
    Dataset out;
    out.features = Tensor::matrix(rows.size(), width - 1);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k + 1 < width; ++k)
            out.features(i, k) = rows[i][k];
    out.labels = std::move(labels);
    return out;
}

}  // namespace dropreg
