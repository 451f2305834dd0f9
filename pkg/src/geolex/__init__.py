"""geolex: geo-demographic analysis of geotagged message corpora.

Filtering and geocoding of message streams, balanced subsampling, name and
text based age/gender inference, discovery of geographically salient words,
and demographically stratified evaluation of text-based geolocation.
"""

from .corpus import (
    FilterConfig,
    FilterReport,
    FilteredCorpus,
    Message,
    UserProfile,
    UserTimeline,
    build_timelines,
    filter_corpus,
    first_name,
    parse_messages,
    tokenize,
)
from .demographics import (
    AgeBins,
    DemographicModel,
    EmConfig,
    NameDemographics,
    em_fit,
    em_posterior,
    expected_age,
    female_share,
    filter_rare_names,
    generate_synthetic,
    load_name_tables,
    name_age_dist,
    name_gender,
    sample_age_dist,
)
from .errors import DataError, GeolexError, NumericalError, ValidationError
from .geo import (
    GeoIndex,
    RepresentationTable,
    l1_distance,
    load_geo_index,
    match_location_field,
    representation_table,
    reverse_geocode,
)
from .geoloc import (
    CvUser,
    EvalTable,
    GeoClassifier,
    cross_validate,
    featurize,
    stratified_accuracy,
    train,
    usage_bins,
)
from .lexvar import (
    AnnotatedLexicon,
    SageModel,
    fit_background,
    lexicon_rate,
    paired_t,
    sage_fit,
    top_k,
)
from .sampling import Candidate, Sample, sample_county_balanced, sample_msa_balanced
from .stats import BootstrapConfig, Interval, bootstrap_ci, rng_stream

__version__ = "0.1.0"
